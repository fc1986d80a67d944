#include "mddc/kv_config.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "mddc/error.hpp"

namespace mddc {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::map<std::string, std::string> parse_kv(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key");
    kv[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str());
}

std::string format_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

bool parse_bool(std::string_view t) {
  if (t == "1" || t == "true" || t == "on" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "off" || t == "no") return false;
  throw InvalidArgument("expected a boolean, got '" + std::string(t) + "'");
}

double parse_double(std::string_view key, std::string_view t) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(t), &used);
    if (used != t.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::logic_error&) {
    throw InvalidArgument(std::string(key) + ": expected a number, got '" + std::string(t) + "'");
  }
}

std::uint64_t parse_u64(std::string_view key, std::string_view t) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw InvalidArgument(std::string(key) + ": expected a non-negative integer, got '" +
                          std::string(t) + "'");
  }
  return v;
}

}  // namespace mddc
