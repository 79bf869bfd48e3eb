#include "taxocap/toml.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace taxocap::toml {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail(std::size_t line_no, const std::string& message) {
    throw TomlError("line " + std::to_string(line_no) + ": " + message);
}

// Strips a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (c == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

std::string parse_basic_string(const std::string& raw, std::size_t line_no) {
    if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') {
        fail(line_no, "expected a double-quoted string: " + raw);
    }
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
        char c = raw[i];
        if (c == '\\') {
            if (i + 1 >= raw.size() - 1) fail(line_no, "dangling escape");
            const char e = raw[++i];
            switch (e) {
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                default: fail(line_no, std::string("unsupported escape \\") + e);
            }
        } else {
            out.push_back(c);
        }
    }
    return out;
}

Value parse_value(const std::string& raw, std::size_t line_no) {
    const std::string v = trim(raw);
    if (v.empty()) fail(line_no, "missing value");
    if (v.front() == '"') return parse_basic_string(v, line_no);
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
        if (v.back() != ']') fail(line_no, "unterminated array");
        std::vector<std::string> items;
        std::string body = v.substr(1, v.size() - 2);
        std::string current;
        bool in_string = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            const char c = body[i];
            if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_string = !in_string;
            if (c == ',' && !in_string) {
                const std::string item = trim(current);
                if (!item.empty()) items.push_back(parse_basic_string(item, line_no));
                current.clear();
            } else {
                current.push_back(c);
            }
        }
        const std::string item = trim(current);
        if (!item.empty()) items.push_back(parse_basic_string(item, line_no));
        return items;
    }
    // Number: integer unless it carries a dot or exponent.
    const bool is_float = v.find_first_of(".eE") != std::string::npos &&
                          !(v.size() > 2 && v[0] == '0' && v[1] == 'x');
    try {
        std::size_t used = 0;
        if (is_float) {
            const double d = std::stod(v, &used);
            if (used != v.size()) fail(line_no, "trailing characters after number: " + v);
            return d;
        }
        const std::int64_t i = std::stoll(v, &used, 10);
        if (used != v.size()) fail(line_no, "trailing characters after number: " + v);
        return i;
    } catch (const TomlError&) {
        throw;
    } catch (const std::exception&) {
        fail(line_no, "cannot parse value: " + v);
    }
}

bool valid_key(const std::string& key) {
    if (key.empty()) return false;
    for (char c : key) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
    }
    return true;
}

}  // namespace

Document Document::parse(const std::string& text) {
    Document doc;
    doc.tables_[""];  // top-level table always exists
    std::istringstream in(text);
    std::string line;
    std::string current_table;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "unterminated table header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (!valid_key(name)) fail(line_no, "invalid table name: " + name);
            current_table = name;
            doc.tables_[current_table];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (!valid_key(key)) fail(line_no, "invalid key: " + key);
        auto& table = doc.tables_[current_table];
        if (table.count(key)) fail(line_no, "duplicate key: " + key);
        table.emplace(key, parse_value(line.substr(eq + 1), line_no));
    }
    return doc;
}

Document Document::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TomlError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const Document::Table& Document::table(const std::string& name) const {
    const auto it = tables_.find(name);
    if (it == tables_.end()) throw TomlError("no such table: [" + name + "]");
    return it->second;
}

std::vector<std::string> Document::table_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : tables_) names.push_back(name);
    return names;
}

const Value* Document::find(const std::string& table, const std::string& key) const {
    const auto it = tables_.find(table);
    if (it == tables_.end()) return nullptr;
    const auto vit = it->second.find(key);
    return vit == it->second.end() ? nullptr : &vit->second;
}

std::optional<std::string> Document::get_string(const std::string& table,
                                                const std::string& key) const {
    const Value* v = find(table, key);
    if (!v) return std::nullopt;
    if (const auto* s = std::get_if<std::string>(v)) return *s;
    throw TomlError("key " + key + " is not a string");
}

std::optional<std::int64_t> Document::get_int(const std::string& table,
                                              const std::string& key) const {
    const Value* v = find(table, key);
    if (!v) return std::nullopt;
    if (const auto* i = std::get_if<std::int64_t>(v)) return *i;
    throw TomlError("key " + key + " is not an integer");
}

std::optional<double> Document::get_double(const std::string& table,
                                           const std::string& key) const {
    const Value* v = find(table, key);
    if (!v) return std::nullopt;
    if (const auto* d = std::get_if<double>(v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(v)) return static_cast<double>(*i);
    throw TomlError("key " + key + " is not a number");
}

std::optional<bool> Document::get_bool(const std::string& table,
                                       const std::string& key) const {
    const Value* v = find(table, key);
    if (!v) return std::nullopt;
    if (const auto* b = std::get_if<bool>(v)) return *b;
    throw TomlError("key " + key + " is not a boolean");
}

std::optional<std::vector<std::string>> Document::get_string_array(
    const std::string& table, const std::string& key) const {
    const Value* v = find(table, key);
    if (!v) return std::nullopt;
    if (const auto* a = std::get_if<std::vector<std::string>>(v)) return *a;
    throw TomlError("key " + key + " is not a string array");
}

void Document::set(const std::string& table, const std::string& key, Value value) {
    tables_[table][key] = std::move(value);
}

}  // namespace taxocap::toml
