#include "imlx/image_io.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace imlx {

namespace {

int next_pnm_token(std::istream& in) {
    // skips whitespace and '#' comments between header fields
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            in.unget();
            int value = 0;
            if (!(in >> value)) throw std::runtime_error("pnm: malformed header");
            return value;
        }
        c = in.get();
    }
    throw std::runtime_error("pnm: truncated header");
}

} // namespace

Raster read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pnm: cannot open " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    int channels = 0;
    if (magic[0] == 'P' && magic[1] == '5') channels = 1;
    else if (magic[0] == 'P' && magic[1] == '6') channels = 3;
    else throw std::runtime_error("pnm: unsupported magic in " + path.string());

    const int width = next_pnm_token(in);
    const int height = next_pnm_token(in);
    const int maxval = next_pnm_token(in);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
        throw std::runtime_error("pnm: bad dimensions in " + path.string());
    in.get(); // single whitespace after maxval

    const std::size_t count = static_cast<std::size_t>(width) * height * channels;
    const int bytes_per = maxval > 255 ? 2 : 1;
    std::vector<std::uint8_t> raw(count * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw std::runtime_error("pnm: truncated pixel data in " + path.string());

    Raster out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data.resize(count);
    const float scale = 1.0f / static_cast<float>(maxval);
    // interleaved on disk, plane-major in memory
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                const std::size_t src = (static_cast<std::size_t>(r) * width + c) * channels + ch;
                int v;
                if (bytes_per == 2) v = (raw[src * 2] << 8) | raw[src * 2 + 1];
                else v = raw[src];
                out.data[(static_cast<std::size_t>(ch) * height + r) * width + c] =
                    static_cast<float>(v) * scale;
            }
        }
    }
    return out;
}

void write_pgm(const std::filesystem::path& path, const Image& image, int maxval) {
    if (maxval != 255 && maxval != 65535)
        throw std::invalid_argument("write_pgm: maxval must be 255 or 65535");
    std::string out;
    out.reserve(32 + image.size() * (maxval == 255 ? 1 : 2));
    out += "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
           std::to_string(maxval) + "\n";
    for (float p : image.pixels) {
        float clamped = p < 0.0f ? 0.0f : (p > 1.0f ? 1.0f : p);
        const int v = static_cast<int>(clamped * static_cast<float>(maxval) + 0.5f);
        if (maxval == 255) {
            out.push_back(static_cast<char>(v));
        } else {
            out.push_back(static_cast<char>((v >> 8) & 0xFF));
            out.push_back(static_cast<char>(v & 0xFF));
        }
    }
    atomic_write(path, out);
}

void write_mask_pgm(const std::filesystem::path& path, const Mask& mask) {
    std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
    out.reserve(out.size() + mask.size());
    for (auto v : mask.cells) out.push_back(static_cast<char>(v ? 255 : 0));
    atomic_write(path, out);
}

Mask read_mask_pgm(const std::filesystem::path& path) {
    Raster raster = read_pnm(path);
    if (raster.channels != 1) throw std::runtime_error("mask: expected single channel " + path.string());
    Mask mask(raster.height, raster.width);
    for (std::size_t i = 0; i < mask.cells.size(); ++i)
        mask.cells[i] = raster.data[i] >= 0.5f ? 1 : 0;
    return mask;
}

namespace {

std::uint32_t crc32_table_entry(std::uint32_t n) {
    for (int k = 0; k < 8; ++k) n = (n & 1) ? 0xEDB88320u ^ (n >> 1) : n >> 1;
    return n;
}

std::uint32_t crc32(const std::uint8_t* buf, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) t[n] = crc32_table_entry(n);
        return t;
    }();
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ buf[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

std::uint32_t adler32(const std::uint8_t* buf, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + buf[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void push_u32_be(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

void push_chunk(std::vector<std::uint8_t>& out, const char type[4],
                const std::vector<std::uint8_t>& payload) {
    push_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    push_u32_be(out, crc32(body.data(), body.size()));
}

} // namespace

void write_png_rgb(const std::filesystem::path& path, int height, int width,
                   const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
        throw std::invalid_argument("write_png_rgb: buffer size mismatch");

    // filter byte 0 per scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height) * (width * 3 + 1));
    for (int r = 0; r < height; ++r) {
        raw.push_back(0);
        const std::uint8_t* row = rgb.data() + static_cast<std::size_t>(r) * width * 3;
        raw.insert(raw.end(), row, row + width * 3);
    }

    // zlib stream, stored (uncompressed) deflate blocks of <= 65535 bytes
    std::vector<std::uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    std::size_t pos = 0;
    while (pos < raw.size()) {
        const std::size_t n = std::min<std::size_t>(65535, raw.size() - pos);
        const bool last = pos + n == raw.size();
        z.push_back(last ? 1 : 0);
        z.push_back(static_cast<std::uint8_t>(n & 0xFF));
        z.push_back(static_cast<std::uint8_t>(n >> 8));
        z.push_back(static_cast<std::uint8_t>(~n & 0xFF));
        z.push_back(static_cast<std::uint8_t>((~n >> 8) & 0xFF));
        z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + n);
        pos += n;
    }
    push_u32_be(z, adler32(raw.data(), raw.size()));

    std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<std::uint8_t> ihdr;
    push_u32_be(ihdr, static_cast<std::uint32_t>(width));
    push_u32_be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    push_chunk(png, "IHDR", ihdr);
    push_chunk(png, "IDAT", z);
    push_chunk(png, "IEND", {});

    atomic_write(path, std::string(png.begin(), png.end()));
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace imlx
