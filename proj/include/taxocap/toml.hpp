#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace taxocap::toml {

// Minimal TOML subset: [table] headers, key = value pairs, # comments.
// Values: basic "..." strings, integers, floats, booleans, and flat arrays
// of strings. Enough for the run configs this project reads.

using Value =
    std::variant<std::string, std::int64_t, double, bool, std::vector<std::string>>;

struct TomlError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Document {
public:
    // table "" holds top-level keys.
    using Table = std::map<std::string, Value>;

    static Document parse_file(const std::string& path);
    static Document parse(const std::string& text);

    bool has_table(const std::string& name) const { return tables_.count(name) > 0; }
    const Table& table(const std::string& name) const;
    std::vector<std::string> table_names() const;

    std::optional<std::string> get_string(const std::string& table,
                                          const std::string& key) const;
    std::optional<std::int64_t> get_int(const std::string& table,
                                        const std::string& key) const;
    std::optional<double> get_double(const std::string& table, const std::string& key) const;
    std::optional<bool> get_bool(const std::string& table, const std::string& key) const;
    std::optional<std::vector<std::string>> get_string_array(const std::string& table,
                                                             const std::string& key) const;

    void set(const std::string& table, const std::string& key, Value value);

private:
    const Value* find(const std::string& table, const std::string& key) const;
    std::map<std::string, Table> tables_;
};

}  // namespace taxocap::toml
