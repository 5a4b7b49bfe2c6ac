#include "toml_lite.hpp"

#include <cctype>
#include <charconv>
#include <sstream>
#include <vector>

#include "homlab/errors.hpp"

namespace homlab::io {

namespace {

using nlohmann::json;

[[noreturn]] void fail(int line, const std::string& what) {
    throw ConfigError("config line " + std::to_string(line) + ": " + what);
}

std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// removes a trailing comment that is not inside a string literal
std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

json parse_scalar(const std::string& tok, int line) {
    if (tok.empty()) fail(line, "empty value");
    if (tok.front() == '"') {
        if (tok.size() < 2 || tok.back() != '"') fail(line, "unterminated string");
        return json(tok.substr(1, tok.size() - 2));
    }
    if (tok == "true") return json(true);
    if (tok == "false") return json(false);
    // try integer first so seeds stay exact
    {
        long long v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec == std::errc{} && p == tok.data() + tok.size()) return json(v);
    }
    {
        double v = 0.0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec == std::errc{} && p == tok.data() + tok.size()) return json(v);
    }
    fail(line, "cannot parse value '" + tok + "'");
}

json parse_value(const std::string& raw, int line) {
    const std::string v = strip(raw);
    if (v.empty()) fail(line, "missing value");
    if (v.front() == '[') {
        if (v.back() != ']') fail(line, "unterminated array");
        json arr = json::array();
        std::string inner = v.substr(1, v.size() - 2);
        std::string cur;
        bool in_str = false;
        for (char c : inner) {
            if (c == '"') in_str = !in_str;
            if (c == ',' && !in_str) {
                if (!strip(cur).empty()) arr.push_back(parse_scalar(strip(cur), line));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!strip(cur).empty()) arr.push_back(parse_scalar(strip(cur), line));
        return arr;
    }
    return parse_scalar(v, line);
}

}  // namespace

nlohmann::json parse_toml_lite(const std::string& text) {
    json root = json::object();
    json* section = &root;
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const std::string line = strip(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(lineno, "unterminated section header");
            const std::string name = strip(line.substr(1, line.size() - 2));
            if (name.empty()) fail(lineno, "empty section name");
            json* cur = &root;
            std::string part;
            std::istringstream ns(name);
            while (std::getline(ns, part, '.')) {
                part = strip(part);
                if (part.empty()) fail(lineno, "empty section path component");
                cur = &(*cur)[part];
                if (!cur->is_object() && !cur->is_null())
                    fail(lineno, "section '" + name + "' collides with a value");
                if (cur->is_null()) *cur = json::object();
            }
            section = cur;
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(lineno, "expected key = value");
        const std::string key = strip(line.substr(0, eq));
        if (key.empty()) fail(lineno, "empty key");
        for (char c : key)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
                fail(lineno, "bad character in key '" + key + "'");
        (*section)[key] = parse_value(line.substr(eq + 1), lineno);
    }
    return root;
}

}  // namespace homlab::io
