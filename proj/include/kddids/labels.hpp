#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "kddids/common.hpp"

namespace kddids {

/// Coarse connection class. The numeric order is canonical and is used for
/// every tie-break in the library.
enum class CoarseLabel : std::uint8_t { normal = 0, dos = 1, probe = 2, r2l = 3, u2r = 4 };

inline constexpr std::size_t kNumClasses = 5;

inline constexpr std::array<CoarseLabel, kNumClasses> kAllClasses = {
    CoarseLabel::normal, CoarseLabel::dos, CoarseLabel::probe, CoarseLabel::r2l,
    CoarseLabel::u2r};

inline constexpr std::size_t index_of(CoarseLabel c) { return static_cast<std::size_t>(c); }

inline constexpr CoarseLabel class_at(std::size_t i) { return kAllClasses.at(i); }

inline constexpr std::string_view to_string(CoarseLabel c) {
    constexpr std::array<std::string_view, kNumClasses> names = {"normal", "dos", "probe", "r2l",
                                                                 "u2r"};
    return names[index_of(c)];
}

/// Accepts the canonical names plus "rtl" as an alias of r2l.
inline std::optional<CoarseLabel> parse_coarse(std::string_view s) {
    for (auto c : kAllClasses) {
        if (s == to_string(c)) return c;
    }
    if (s == "rtl") return CoarseLabel::r2l;
    return std::nullopt;
}

class UnmappedLabelError : public Error {
public:
    explicit UnmappedLabelError(std::string label)
        : Error("fine label '" + label + "' is not in the taxonomy; map it with "
                "'taxonomy." + label + "=<class>' in the config"),
          label_(std::move(label)) {}

    const std::string& label() const { return label_; }

private:
    std::string label_;
};

/// Fine attack label -> coarse class.
class Taxonomy {
public:
    /// The labels of the KDD'99 training data.
    static Taxonomy kdd_default() {
        Taxonomy t;
        t.add("normal", CoarseLabel::normal);
        for (auto l : {"back", "land", "neptune", "pod", "smurf", "teardrop"})
            t.add(l, CoarseLabel::dos);
        for (auto l : {"buffer_overflow", "loadmodule", "perl", "rootkit"})
            t.add(l, CoarseLabel::u2r);
        for (auto l : {"ftp_write", "guess_passwd", "imap", "multihop", "phf", "spy",
                       "warezclient", "warezmaster"})
            t.add(l, CoarseLabel::r2l);
        for (auto l : {"ipsweep", "nmap", "portsweep", "satan"}) t.add(l, CoarseLabel::probe);
        return t;
    }

    /// Adds or remaps a label.
    void add(std::string fine, CoarseLabel coarse) { map_[std::move(fine)] = coarse; }

    bool contains(std::string_view fine) const { return map_.find(fine) != map_.end(); }

    CoarseLabel coarse_of(std::string_view fine) const {
        auto it = map_.find(fine);
        if (it == map_.end()) throw UnmappedLabelError(std::string(fine));
        return it->second;
    }

    const std::map<std::string, CoarseLabel, std::less<>>& entries() const { return map_; }

    std::size_t size() const { return map_.size(); }

    bool operator==(const Taxonomy&) const = default;

    /// One "fine=coarse" line per label, sorted.
    std::string serialize() const {
        std::string out = "# kddids taxonomy\n";
        for (const auto& [fine, coarse] : map_) {
            out += fine;
            out += '=';
            out += to_string(coarse);
            out += '\n';
        }
        return out;
    }

    static Taxonomy parse(std::string_view text, const std::string& source) {
        Taxonomy t;
        std::size_t line_no = 0;
        for (auto line : split(text, '\n')) {
            ++line_no;
            line = trim(line);
            if (line.empty() || line.front() == '#') continue;
            const auto eq = line.find('=');
            std::optional<CoarseLabel> coarse;
            if (eq != std::string_view::npos) coarse = parse_coarse(trim(line.substr(eq + 1)));
            if (!coarse || trim(line.substr(0, eq)).empty()) {
                throw FormatError(source + ":" + std::to_string(line_no) +
                                  ": expected 'fine=coarse'");
            }
            t.add(std::string(trim(line.substr(0, eq))), *coarse);
        }
        return t;
    }

private:
    std::map<std::string, CoarseLabel, std::less<>> map_;
};

inline CoarseLabel map_fine_to_coarse(const Taxonomy& taxonomy, std::string_view fine) {
    return taxonomy.coarse_of(fine);
}

}  // namespace kddids
