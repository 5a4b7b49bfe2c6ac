#pragma once

#include <string>

#include <json.hpp>

namespace homlab::io {

// Minimal TOML reader covering the experiment-config subset: comments,
// [section] / [section.sub] headers, string/number/bool scalars and flat
// arrays. Errors carry the offending line number. Anything richer should
// just use the JSON form of the config.
nlohmann::json parse_toml_lite(const std::string& text);

}  // namespace homlab::io
