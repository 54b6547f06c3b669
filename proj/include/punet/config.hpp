// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "punet/tensor.hpp"

namespace punet {

// 'key = value' lines; blank lines and '#' comments ignored; duplicate or
// malformed keys rejected with the line number.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> load_kv_file(const std::string& path);

// Typed lookups; missing key -> fallback, unparsable value -> error.
i64 kv_int(const std::map<std::string, std::string>& kv,
           const std::string& key, i64 fallback);
double kv_double(const std::map<std::string, std::string>& kv,
                 const std::string& key, double fallback);
std::string kv_string(const std::map<std::string, std::string>& kv,
                      const std::string& key, const std::string& fallback);

}  // namespace punet
