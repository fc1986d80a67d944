#pragma once

#include <filesystem>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace mddc {

// Flat `key = value` text. Blank lines and lines starting with '#' are
// ignored; later keys override earlier ones.
std::map<std::string, std::string> parse_kv(std::string_view text);
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);
std::string format_kv(const std::map<std::string, std::string>& kv);

bool parse_bool(std::string_view text);
double parse_double(std::string_view key, std::string_view text);
std::uint64_t parse_u64(std::string_view key, std::string_view text);

}  // namespace mddc
