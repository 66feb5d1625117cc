#include <doctest.h>

#include <cmath>
#include <queue>

#include "imlx/preprocess.hpp"
#include "imlx/rng.hpp"

using namespace imlx;
using namespace imlx::preprocess;

namespace {

// independent component-labeling oracle (BFS, 4-connectivity)
int count_components_oracle(const Mask& mask) {
    std::vector<int> seen(mask.size(), 0);
    int count = 0;
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            if (!mask.at(r, c) || seen[r * mask.width + c]) continue;
            ++count;
            std::queue<std::pair<int, int>> q;
            q.push({r, c});
            seen[r * mask.width + c] = 1;
            while (!q.empty()) {
                auto [cr, cc] = q.front();
                q.pop();
                const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= mask.height || nc < 0 || nc >= mask.width) continue;
                    if (mask.at(nr, nc) && !seen[nr * mask.width + nc]) {
                        seen[nr * mask.width + nc] = 1;
                        q.push({nr, nc});
                    }
                }
            }
        }
    }
    return count;
}

void fill_rect(Mask& mask, int r0, int c0, int r1, int c1) {
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) mask.at(r, c) = 1;
}

Raster gray_raster(const Image& img) {
    Raster r;
    r.channels = 1;
    r.height = img.height;
    r.width = img.width;
    r.data = img.pixels;
    return r;
}

} // namespace

TEST_CASE("standardize: in-range 512 input with full dynamic range is unchanged") {
    Image img(512, 512);
    Rng rng(1);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    img.pixels[0] = 0.0f;
    img.pixels[1] = 1.0f;
    const Image out = standardize(gray_raster(img), 512);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(out.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
}

TEST_CASE("standardize: constant image becomes all zeros") {
    Image img(64, 64, 0.7f);
    const Image out = standardize(gray_raster(img), 512);
    for (float v : out.pixels) CHECK(v == 0.0f);
}

TEST_CASE("standardize: channel mean comes before scaling") {
    Raster raster;
    raster.channels = 3;
    raster.height = 8;
    raster.width = 8;
    raster.data.resize(3 * 64);
    for (int i = 0; i < 64; ++i) {
        raster.data[0 * 64 + i] = 0.2f;
        raster.data[1 * 64 + i] = 0.4f;
        raster.data[2 * 64 + i] = 0.6f;
    }
    // constant mean 0.4 -> degenerate normalization -> zeros; perturb one pixel
    raster.data[0] = 0.8f; // pixel 0 mean becomes 0.6
    const Image out = standardize(raster, 8);
    CHECK(out.pixels[0] == doctest::Approx(1.0));
    CHECK(out.pixels[10] == doctest::Approx(0.0));
}

TEST_CASE("standardize: empty and tiny rasters are rejected") {
    Raster empty;
    CHECK_THROWS_AS(standardize(empty, 512), std::invalid_argument);
    Image small(4, 4, 0.5f);
    CHECK_THROWS_AS(standardize(gray_raster(small), 512), std::invalid_argument);
}

TEST_CASE("postprocess: interior holes are filled") {
    Mask mask(32, 32);
    fill_rect(mask, 4, 2, 27, 14); // one-half mask: the separation cut stays out
    mask.at(10, 10) = 0;           // one-pixel interior hole
    const auto result = postprocess_mask(mask);
    CHECK(result.mask.at(10, 10) == 1);
    CHECK_FALSE(result.warning);
}

TEST_CASE("postprocess: flood fill never removes foreground (superset property)") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Mask mask(24, 24);
        for (auto& v : mask.cells) v = rng.bernoulli(0.35) ? 1 : 0;
        const Mask filled = fill_holes(mask);
        for (std::size_t i = 0; i < mask.cells.size(); ++i)
            if (mask.cells[i]) CHECK(filled.cells[i] == 1);
    }
}

TEST_CASE("postprocess: small components are removed, at most two survive") {
    Mask mask(100, 100);
    fill_rect(mask, 0, 0, 59, 49);   // 30%
    fill_rect(mask, 70, 60, 99, 97); // ~11.4% -> second largest
    fill_rect(mask, 90, 10, 94, 19); // 0.5% -> removed
    const auto result = postprocess_mask(mask, 0.05);
    CHECK(count_components_oracle(result.mask) == 2);
    CHECK(result.mask.at(92, 12) == 0);

    // component filter is monotone: output count <= min(input count, 2)
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Mask random_mask(40, 40);
        for (auto& v : random_mask.cells) v = rng.bernoulli(0.4) ? 1 : 0;
        const auto post = postprocess_mask(random_mask, 0.01);
        CHECK(count_components_oracle(post.mask) <= 2);
    }
}

TEST_CASE("postprocess: stuck lungs split into exactly two components") {
    Mask mask(64, 64);
    fill_rect(mask, 10, 6, 50, 26);  // left lung
    fill_rect(mask, 10, 38, 50, 58); // right lung
    fill_rect(mask, 28, 26, 29, 38); // thin 2-pixel bridge
    REQUIRE(count_components_oracle(mask) == 1);
    const auto result = postprocess_mask(mask);
    CHECK(count_components_oracle(result.mask) == 2);
}

TEST_CASE("postprocess: all-zero mask returns unchanged with a warning") {
    Mask mask(16, 16);
    const auto result = postprocess_mask(mask);
    CHECK(result.warning);
    CHECK(result.mask.area() == 0);
}

TEST_CASE("crop_to_roi: hand-traced 64x64 example") {
    Image img(64, 64, 0.5f);
    Mask mask(64, 64);
    fill_rect(mask, 10, 5, 40, 50);
    const auto result = crop_to_roi(img, mask);
    CHECK(result.box.r0 == 9);
    CHECK(result.box.r1 == 63);
    CHECK(result.box.c0 == 4);
    CHECK(result.box.c1 == 51);
    CHECK(result.image.height == 55);
    CHECK(result.image.width == 48);
}

TEST_CASE("crop_to_roi: full-frame mask crops the whole image") {
    Image img(32, 32, 0.3f);
    Mask mask(32, 32, 1);
    const auto result = crop_to_roi(img, mask);
    CHECK(result.box.r0 == 0);
    CHECK(result.box.c0 == 0);
    CHECK(result.box.r1 == 31);
    CHECK(result.box.c1 == 31);
    CHECK_FALSE(result.warning);
}

TEST_CASE("crop_to_roi: empty mask falls back to the full frame with a warning") {
    Image img(32, 32, 0.3f);
    Mask mask(32, 32);
    const auto result = crop_to_roi(img, mask);
    CHECK(result.warning);
    CHECK(result.box.r1 == 31);
}

TEST_CASE("crop_to_roi: the box contains every foreground pixel") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        Image img(48, 48, 0.1f);
        Mask mask(48, 48);
        for (auto& v : mask.cells) v = rng.bernoulli(0.1) ? 1 : 0;
        if (mask.area() == 0) continue;
        const auto result = crop_to_roi(img, mask);
        for (int r = 0; r < 48; ++r)
            for (int c = 0; c < 48; ++c)
                if (mask.at(r, c)) {
                    CHECK(r >= result.box.r0);
                    CHECK(r <= result.box.r1);
                    CHECK(c >= result.box.c0);
                    CHECK(c <= result.box.c1);
                }
    }
}

TEST_CASE("resize: 512 to 224 gives the expected shape") {
    Image img(512, 512, 0.4f);
    const Image out = resize(img, 224);
    CHECK(out.height == 224);
    CHECK(out.width == 224);
}

TEST_CASE("resize: same side is the identity within 1e-6") {
    Image img(33, 33);
    Rng rng(5);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    const Image out = resize_bilinear(img, 33, 33);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(std::abs(out.pixels[i] - img.pixels[i]) < 1e-6f);
}

TEST_CASE("resize: 2x2 checkerboard averages to a single 0.5 pixel") {
    Image img(2, 2);
    img.at(0, 0) = 0.0f;
    img.at(0, 1) = 1.0f;
    img.at(1, 0) = 1.0f;
    img.at(1, 1) = 0.0f;
    const Image out = resize_bilinear(img, 1, 1);
    CHECK(out.pixels[0] == doctest::Approx(0.5));
}

TEST_CASE("pipeline determinism: standardize/postprocess/crop/resize is pure") {
    Rng rng(77);
    Image img(120, 96);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    Mask mask(512, 512);
    fill_rect(mask, 100, 80, 400, 220);
    fill_rect(mask, 100, 300, 400, 430);

    auto run = [&]() {
        const Image work = standardize(gray_raster(img), 512);
        const auto post = postprocess_mask(mask);
        const auto crop = crop_to_roi(work, post.mask);
        return resize(crop.image, 64).pixels;
    };
    CHECK(run() == run());
}

TEST_CASE("roi transform maps original boxes through crop and resize") {
    RoiTransform t;
    t.orig_height = 128;
    t.orig_width = 128;
    t.work_side = 512;
    t.crop = {0, 0, 511, 511};
    t.out_side = 64;
    // full-frame crop: original (r,c) scales by 0.5
    const auto box = t.map_box(20, 40, 60, 80);
    CHECK(box.r0 == doctest::Approx(10).epsilon(0.15));
    CHECK(box.c0 == doctest::Approx(20).epsilon(0.15));
    CHECK(box.r1 == doctest::Approx(30).epsilon(0.15));
    CHECK(box.c1 == doctest::Approx(40).epsilon(0.15));
}
