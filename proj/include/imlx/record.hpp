#pragma once

#include <set>
#include <string>

namespace imlx {

// One manifest row. Label names are leaf signs from the taxonomy; mask_path
// and split may be empty.
struct SampleRecord {
    std::string image_path;
    std::string patient_id;
    std::set<std::string> labels;
    std::string mask_path;
    std::string split;
};

} // namespace imlx
