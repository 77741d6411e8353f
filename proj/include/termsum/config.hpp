#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "termsum/error.hpp"

namespace termsum {

/// Parsed `key = value` text. Blank lines and `#` comments are skipped;
/// keys keep their file order for round-tripping into dataset headers.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::string_view text) {
        KeyValueConfig cfg;
        std::size_t line_no = 0;
        std::size_t start = 0;
        while (start <= text.size()) {
            std::size_t end = text.find('\n', start);
            if (end == std::string_view::npos) end = text.size();
            std::string_view line = text.substr(start, end - start);
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
            line = trim(line);
            if (!line.empty()) {
                const auto eq = line.find('=');
                if (eq == std::string_view::npos)
                    throw ConfigError("config line " + std::to_string(line_no) + ": expected `key = value`");
                const std::string key(trim(line.substr(0, eq)));
                const std::string value(trim(line.substr(eq + 1)));
                if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
                if (cfg.values_.contains(key))
                    throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key `" + key + "`");
                cfg.set(key, value);
            }
            if (end == text.size()) break;
            start = end + 1;
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file `" + path + "`");
        std::stringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.contains(key)) order_.push_back(key);
        values_[key] = value;
    }

    bool contains(const std::string& key) const { return values_.contains(key); }
    const std::string& at(const std::string& key) const { return values_.at(key); }
    const std::vector<std::string>& keys() const noexcept { return order_; }

    /// Canonical text form: one `key = value` per line in insertion order.
    std::string to_string() const {
        std::string out;
        for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
        return out;
    }

private:
    static std::string_view trim(std::string_view s) {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
        return s;
    }

    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
    T out{};
    if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw ConfigError("key `" + key + "`: expected true/false, got `" + text + "`");
    } else if constexpr (std::is_floating_point_v<T>) {
        std::size_t used = 0;
        try {
            out = static_cast<T>(std::stod(text, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != text.size() || text.empty())
            throw ConfigError("key `" + key + "`: expected a number, got `" + text + "`");
        return out;
    } else {
        const auto* first = text.data();
        const auto* last = text.data() + text.size();
        auto [ptr, ec] = std::from_chars(first, last, out);
        if (ec != std::errc{} || ptr != last || text.empty())
            throw ConfigError("key `" + key + "`: expected an integer, got `" + text + "`");
        return out;
    }
}

template <class T>
std::string format_value(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, ptr);
    } else {
        return std::to_string(v);
    }
}

}  // namespace detail

/// Two-way binding between struct fields and prefixed config keys.
/// Reading marks keys as consumed so leftovers can be reported as typos.
class ConfigBinder {
public:
    enum class Mode { read, write };

    ConfigBinder(Mode mode, KeyValueConfig& cfg, std::string prefix)
        : mode_(mode), cfg_(&cfg), prefix_(std::move(prefix)) {}

    template <class T>
    ConfigBinder& field(const std::string& name, T& value) {
        const std::string key = prefix_.empty() ? name : prefix_ + "." + name;
        known_.insert(key);
        if (mode_ == Mode::read) {
            if (cfg_->contains(key)) value = detail::parse_value<T>(key, cfg_->at(key));
        } else {
            cfg_->set(key, detail::format_value(value));
        }
        return *this;
    }

    const std::set<std::string>& known() const noexcept { return known_; }

private:
    Mode mode_;
    KeyValueConfig* cfg_;
    std::string prefix_;
    std::set<std::string> known_;
};

/// Read a config struct exposing `bind(ConfigBinder&)` under `prefix`.
template <class Config>
Config read_section(KeyValueConfig& cfg, const std::string& prefix, std::set<std::string>* consumed = nullptr) {
    Config out{};
    ConfigBinder binder(ConfigBinder::Mode::read, cfg, prefix);
    out.bind(binder);
    if (consumed) consumed->insert(binder.known().begin(), binder.known().end());
    return out;
}

template <class Config>
void write_section(KeyValueConfig& cfg, const std::string& prefix, Config value) {
    ConfigBinder binder(ConfigBinder::Mode::write, cfg, prefix);
    value.bind(binder);
}

/// Throws on any key not in `consumed`.
inline void reject_unknown_keys(const KeyValueConfig& cfg, const std::set<std::string>& consumed) {
    for (const auto& k : cfg.keys())
        if (!consumed.contains(k)) throw ConfigError("unknown config key `" + k + "`");
}

}  // namespace termsum
