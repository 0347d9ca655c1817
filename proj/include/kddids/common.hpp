#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kddids {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A malformed persistence file or a version mismatch.
class FormatError : public Error {
public:
    using Error::Error;
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent seeds from one root.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for a named component, e.g. derive_seed(root, "rf").
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
    return mix64(root ^ fnv1a(component));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
    return mix64(root + mix64(index));
}

// std::uniform_int_distribution is implementation-defined; these are not.

/// Uniform integer in [0, n), n > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return static_cast<std::size_t>(v % bound);
}

/// Uniform real in [0, 1).
inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

/// Shortest decimal that parses back to exactly the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

/// Fixed-point rendering, e.g. format_fixed(99.5, 3) == "99.500".
inline std::string format_fixed(double v, int decimals) {
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed,
                             decimals);
    return std::string(buf.data(), res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

template <class Int>
bool parse_integer(std::string_view s, Int& out) {
    if (s.empty()) return false;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

inline std::string_view trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open for writing: " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Line/token cursor over a versioned structured-text file.
class TextReader {
public:
    TextReader(std::string text, std::string source)
        : text_(std::move(text)), source_(std::move(source)) {}

    bool at_end() {
        skip_blank();
        return pos_ >= text_.size();
    }

    /// Next non-blank line split on whitespace.
    std::vector<std::string_view> tokens() {
        skip_blank();
        if (pos_ >= text_.size()) fail("unexpected end of file");
        auto end = text_.find('\n', pos_);
        if (end == std::string::npos) end = text_.size();
        std::string_view line(text_.data() + pos_, end - pos_);
        pos_ = end + 1;
        ++line_;
        return split_ws(line);
    }

    /// Next line; first token must equal `key`. Returns the remaining tokens.
    std::vector<std::string_view> expect(std::string_view key, std::size_t min_args = 0) {
        auto t = tokens();
        if (t.empty() || t[0] != key) fail("expected '" + std::string(key) + "'");
        if (t.size() - 1 < min_args) fail("too few values after '" + std::string(key) + "'");
        t.erase(t.begin());
        return t;
    }

    void expect_header(std::string_view magic, int version) {
        auto t = tokens();
        if (t.size() != 2 || t[0] != magic) {
            fail("not a " + std::string(magic) + " file");
        }
        int v = 0;
        if (!parse_integer(t[1], v) || v != version) {
            fail("unsupported format version '" + std::string(t[1]) + "' (expected " +
                 std::to_string(version) + ")");
        }
    }

    double to_double(std::string_view s) {
        double v = 0;
        if (!parse_double(s, v)) fail("bad number '" + std::string(s) + "'");
        return v;
    }

    template <class Int>
    Int to_int(std::string_view s) {
        Int v{};
        if (!parse_integer(s, v)) fail("bad integer '" + std::string(s) + "'");
        return v;
    }

    std::vector<double> doubles(std::string_view key, std::size_t count) {
        auto t = expect(key);
        if (t.size() != count) {
            fail("expected " + std::to_string(count) + " values after '" + std::string(key) +
                 "', got " + std::to_string(t.size()));
        }
        std::vector<double> out;
        out.reserve(count);
        for (auto s : t) out.push_back(to_double(s));
        return out;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(source_ + ":" + std::to_string(line_) + ": " + what);
    }

private:
    void skip_blank() {
        while (pos_ < text_.size()) {
            auto end = text_.find('\n', pos_);
            if (end == std::string::npos) end = text_.size();
            if (!trim(std::string_view(text_.data() + pos_, end - pos_)).empty()) return;
            pos_ = end + 1;
            ++line_;
        }
    }

    std::string text_;
    std::string source_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

/// Appends "key v1 v2 ..." with round-trip precision.
template <class Range>
void write_values(std::string& out, std::string_view key, const Range& values) {
    out += key;
    for (double v : values) {
        out += ' ';
        out += format_double(v);
    }
    out += '\n';
}

}  // namespace kddids
