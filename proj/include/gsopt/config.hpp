#pragma once

#include "gsopt/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace gsopt {

enum class ConfigType { Int, Double, Bool, String };

struct ConfigEntry {
    std::string key;
    ConfigType type = ConfigType::String;
    std::string default_value;
    std::string help;
};

/// Flat key-value configuration against a fixed registry of known keys.
/// Unknown keys are rejected with a nearest-key suggestion; values are
/// type-checked when set.
class Config {
public:
    /// All known keys with defaults and one-line help.
    static const std::vector<ConfigEntry>& registry();
    /// Every key at its default value.
    static Config defaults();
    /// Defaults overlaid with `key = value` lines from a file.
    /// '#' starts a comment; blank lines are skipped.
    static Config from_file(const std::string& path);

    /// Parses one `key = value` line; `where` prefixes error messages.
    void apply_line(const std::string& line, const std::string& where = "");
    /// Validates the key against the registry and the value against its type.
    void set(const std::string& key, const std::string& value);

    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;

    /// Registry key closest to `unknown` in edit distance.
    static std::string suggest(const std::string& unknown);

    /// Full key-value listing, one `key = value` line per registry entry.
    std::string to_string() const;

private:
    std::map<std::string, std::string> values_;
    const ConfigEntry& entry_checked(const std::string& key, ConfigType want) const;
};

} // namespace gsopt
