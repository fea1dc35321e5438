#ifndef HJB_TOOLS_CONFIG_HPP
#define HJB_TOOLS_CONFIG_HPP

#include "hjb/types.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace hjb::tools {

/// Flat key = value settings. Defaults are declared up front; files and overrides may only set known keys.
class Settings {
public:
    explicit Settings(std::map<std::string, std::string> defaults) : values_(std::move(defaults)) {}

    /// Lines "key = value"; '#' starts a comment.
    void load_file(const std::string& path);
    /// "key=value".
    void apply_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    const std::string& str(const std::string& key) const;
    Scalar real(const std::string& key) const;
    int integer(const std::string& key) const;
    std::vector<Scalar> reals(const std::string& key) const;
    std::vector<int> integers(const std::string& key) const;
    Vec2 vec(const std::string& key) const;
    /// Row-major "a11,a12,a21,a22".
    Mat2 mat(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

/// Thrown for malformed configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hjb::tools

#endif
