#include "config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace hjb::tools {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

Scalar parse_real(const std::string& key, const std::string& text)
{
    try {
        std::size_t used = 0;
        const Scalar v = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("setting '" + key + "': expected a number, got '" + text + "'");
    }
}

} // namespace

void Settings::load_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void Settings::apply_override(const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Settings::set(const std::string& key, const std::string& value)
{
    const auto it = values_.find(key);
    if (it == values_.end()) {
        std::string known;
        for (const auto& [k, v] : values_) known += (known.empty() ? "" : ", ") + k;
        throw ConfigError("unknown setting '" + key + "' (known: " + known + ")");
    }
    it->second = value;
}

const std::string& Settings::str(const std::string& key) const
{
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing setting '" + key + "'");
    return it->second;
}

Scalar Settings::real(const std::string& key) const { return parse_real(key, str(key)); }

int Settings::integer(const std::string& key) const
{
    const Scalar v = real(key);
    if (v != std::floor(v)) throw ConfigError("setting '" + key + "': expected an integer");
    return static_cast<int>(v);
}

std::vector<Scalar> Settings::reals(const std::string& key) const
{
    std::vector<Scalar> out;
    for (const auto& item : split(str(key))) out.push_back(parse_real(key, item));
    if (out.empty()) throw ConfigError("setting '" + key + "': list must not be empty");
    return out;
}

std::vector<int> Settings::integers(const std::string& key) const
{
    std::vector<int> out;
    for (Scalar v : reals(key)) {
        if (v != std::floor(v)) throw ConfigError("setting '" + key + "': expected integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

Vec2 Settings::vec(const std::string& key) const
{
    const auto v = reals(key);
    if (v.size() != 2) throw ConfigError("setting '" + key + "': expected two entries");
    return Vec2(v[0], v[1]);
}

Mat2 Settings::mat(const std::string& key) const
{
    const auto v = reals(key);
    if (v.size() != 4) throw ConfigError("setting '" + key + "': expected four entries");
    Mat2 m;
    m << v[0], v[1], v[2], v[3];
    return m;
}

} // namespace hjb::tools
