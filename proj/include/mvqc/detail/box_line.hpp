#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvqc/geometry.hpp"

namespace mvqc::detail {

struct BoxLine {
    int class_id = 0;
    BBox bbox;
    std::optional<double> confidence;
    bool clamped = false;
};

/// Parse "class cx cy w h" (or with a trailing confidence when
/// `with_confidence`). Blank lines return nullopt. Throws ParseError or
/// TaxonomyError.
std::optional<BoxLine> parse_box_line(std::string_view line, std::size_t lineno,
                                      std::size_t class_count, bool with_confidence);

void append_box_line(std::string& out, int class_id, const BBox& b,
                     std::optional<double> confidence = std::nullopt);

}  // namespace mvqc::detail
