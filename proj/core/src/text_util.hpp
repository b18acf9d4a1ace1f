#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "fedfdia/common.hpp"

namespace fedfdia::detail {

/// Whitespace tokenizer for the line-oriented config formats.
/// Skips blank lines and strips `#` comments; tracks line numbers for errors.
class LineReader {
  public:
    LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    bool next(std::vector<std::string_view>& tokens) {
        while (std::getline(in_, buffer_)) {
            ++line_;
            if (auto hash = buffer_.find('#'); hash != std::string::npos) {
                buffer_.resize(hash);
            }
            tokens = split(buffer_);
            if (!tokens.empty()) {
                return true;
            }
        }
        return false;
    }

    int line() const { return line_; }
    std::string where() const { return source_ + ":" + std::to_string(line_); }

    double number(std::string_view text, std::string_view what) const {
        try {
            return parse_double(text, what);
        } catch (const ConfigError& e) {
            throw ConfigError(where() + ": " + e.what());
        }
    }

    long long integer(std::string_view text, std::string_view what) const {
        try {
            return parse_int(text, what);
        } catch (const ConfigError& e) {
            throw ConfigError(where() + ": " + e.what());
        }
    }

    static std::vector<std::string_view> split(std::string_view s, char extra_sep = '\0') {
        std::vector<std::string_view> out;
        std::size_t i = 0;
        auto is_sep = [extra_sep](char c) { return c == ' ' || c == '\t' || c == '\r' || (extra_sep && c == extra_sep); };
        while (i < s.size()) {
            while (i < s.size() && is_sep(s[i])) {
                ++i;
            }
            std::size_t j = i;
            while (j < s.size() && !is_sep(s[j])) {
                ++j;
            }
            if (j > i) {
                out.push_back(s.substr(i, j - i));
            }
            i = j;
        }
        return out;
    }

  private:
    std::istream& in_;
    std::string source_;
    std::string buffer_;
    int line_ = 0;
};

}  // namespace fedfdia::detail
