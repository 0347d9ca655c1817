#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "kddids/common.hpp"
#include "kddids/labels.hpp"

namespace kddids {

inline constexpr std::size_t kRawFieldCount = 42;  // 41 features + label
inline constexpr std::size_t kFeatureDim = 41;
inline constexpr std::size_t kNumericColumns = 38;

using FeatureVector = std::array<double, kFeatureDim>;

/// KDD'99 column names in file order (the label column is not listed).
inline constexpr std::array<std::string_view, 41> kRawColumnNames = {
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate"};

/// Encoded layout: duration, the protocol one-hot block in place of
/// protocol_type, then src_bytes .. dst_host_srv_rerror_rate. service and
/// flag are dropped.
inline constexpr std::size_t kOneHotBegin = 1;
inline constexpr std::size_t kOneHotEnd = 4;

inline const std::array<std::string, kFeatureDim>& encoded_column_names() {
    static const auto names = [] {
        std::array<std::string, kFeatureDim> n;
        n[0] = "duration";
        n[1] = "protocol_tcp";
        n[2] = "protocol_udp";
        n[3] = "protocol_icmp";
        for (std::size_t raw = 4, j = 4; raw < kRawColumnNames.size(); ++raw, ++j) {
            n[j] = std::string(kRawColumnNames[raw]);
        }
        return n;
    }();
    return names;
}

enum class Protocol : std::uint8_t { tcp = 0, udp = 1, icmp = 2 };

inline std::string_view to_string(Protocol p) {
    constexpr std::array<std::string_view, 3> names = {"tcp", "udp", "icmp"};
    return names[static_cast<std::size_t>(p)];
}

/// One parsed connection line.
struct RawRecord {
    /// The 38 numeric columns: duration, then src_bytes onward, in file order.
    std::array<double, kNumericColumns> numeric{};
    Protocol protocol = Protocol::tcp;
    std::string service;
    std::string flag;
    std::string fine_label;

    bool operator==(const RawRecord&) const = default;
};

class ParseError : public Error {
public:
    ParseError(std::string what, std::size_t line, std::size_t column)
        : Error(describe(what, line, column)), reason_(std::move(what)), line_(line),
          column_(column) {}

    const std::string& reason() const { return reason_; }
    std::size_t line() const { return line_; }
    /// 1-based field number, 0 when the error concerns the whole line.
    std::size_t column() const { return column_; }

private:
    static std::string describe(const std::string& what, std::size_t line, std::size_t column) {
        std::string s = "line " + std::to_string(line);
        if (column > 0) s += ", column " + std::to_string(column);
        return s + ": " + what;
    }

    std::string reason_;
    std::size_t line_;
    std::size_t column_;
};

/// Parses one comma-separated KDD line (41 features plus a label that may
/// carry a trailing '.').
inline RawRecord parse_kdd_line(std::string_view line, std::size_t line_no = 0) {
    line = trim(line);
    const auto fields = split(line, ',');
    if (fields.size() != kRawFieldCount) {
        throw ParseError("expected 42 fields, got " + std::to_string(fields.size()), line_no, 0);
    }
    RawRecord r;
    std::size_t k = 0;
    for (std::size_t col = 0; col < kRawFieldCount - 1; ++col) {
        const auto f = trim(fields[col]);
        if (col == 1) {
            if (f == "tcp") r.protocol = Protocol::tcp;
            else if (f == "udp") r.protocol = Protocol::udp;
            else if (f == "icmp") r.protocol = Protocol::icmp;
            else
                throw ParseError("unknown protocol_type '" + std::string(f) + "'", line_no,
                                 col + 1);
        } else if (col == 2) {
            r.service = std::string(f);
        } else if (col == 3) {
            r.flag = std::string(f);
        } else {
            double v = 0;
            if (!parse_double(f, v) || !std::isfinite(v)) {
                throw ParseError("unparseable " + std::string(kRawColumnNames[col]) + " value '" +
                                     std::string(f) + "'",
                                 line_no, col + 1);
            }
            if (v < 0) {
                throw ParseError("negative " + std::string(kRawColumnNames[col]) + " value '" +
                                     std::string(f) + "'",
                                 line_no, col + 1);
            }
            r.numeric[k++] = v == 0 ? 0.0 : v;  // folds -0
        }
    }
    auto label = trim(fields.back());
    if (!label.empty() && label.back() == '.') label.remove_suffix(1);
    if (label.empty()) throw ParseError("empty label", line_no, kRawFieldCount);
    r.fine_label = std::string(label);
    return r;
}

namespace detail {

struct RawRecordHash {
    std::size_t operator()(const RawRecord* r) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (double v : r->numeric) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            h = mix64(h ^ bits);
        }
        h = mix64(h ^ static_cast<std::uint64_t>(r->protocol));
        h = fnv1a(r->service, h);
        h = fnv1a(r->flag, h ^ 0xff);
        h = fnv1a(r->fine_label, h ^ 0xfe);
        return static_cast<std::size_t>(h);
    }
};

struct RawRecordEq {
    bool operator()(const RawRecord* a, const RawRecord* b) const { return *a == *b; }
};

}  // namespace detail

/// Keeps the first occurrence of every record; features and label together
/// form the key.
inline std::vector<RawRecord> deduplicate(const std::vector<RawRecord>& records) {
    std::unordered_set<const RawRecord*, detail::RawRecordHash, detail::RawRecordEq> seen;
    seen.reserve(records.size());
    std::vector<RawRecord> out;
    for (const auto& r : records) {
        if (seen.insert(&r).second) out.push_back(r);
    }
    return out;
}

struct EncodedRecord {
    FeatureVector x{};
    std::string fine_label;
    CoarseLabel coarse_label = CoarseLabel::normal;

    bool operator==(const EncodedRecord&) const = default;
};

inline FeatureVector encode_features(const RawRecord& r) {
    FeatureVector x{};
    x[0] = r.numeric[0];
    x[kOneHotBegin + static_cast<std::size_t>(r.protocol)] = 1.0;
    for (std::size_t i = 1; i < kNumericColumns; ++i) x[kOneHotEnd + i - 1] = r.numeric[i];
    return x;
}

inline EncodedRecord encode(const RawRecord& r, const Taxonomy& taxonomy) {
    return EncodedRecord{encode_features(r), r.fine_label, taxonomy.coarse_of(r.fine_label)};
}

using ClassCounts = std::array<std::size_t, kNumClasses>;

struct Dataset {
    std::vector<EncodedRecord> records;
    std::string provenance;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    ClassCounts class_counts() const {
        ClassCounts c{};
        for (const auto& r : records) ++c[index_of(r.coarse_label)];
        return c;
    }

    std::map<std::string, std::size_t> fine_counts() const {
        std::map<std::string, std::size_t> c;
        for (const auto& r : records) ++c[r.fine_label];
        return c;
    }
};

inline Dataset encode_all(const std::vector<RawRecord>& raw, const Taxonomy& taxonomy,
                          std::string provenance = {}) {
    Dataset ds;
    ds.provenance = std::move(provenance);
    ds.records.reserve(raw.size());
    for (const auto& r : raw) ds.records.push_back(encode(r, taxonomy));
    return ds;
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.provenance = ds.provenance;
    out.records.reserve(indices.size());
    for (auto i : indices) out.records.push_back(ds.records.at(i));
    return out;
}

/// Per-class target counts for resample().
struct SamplingPlan {
    ClassCounts target{};
    std::uint64_t seed = 0;

    /// normal 39524, dos 27285, probe 2131, r2l 999, u2r 86.
    static SamplingPlan table_one(std::uint64_t seed) {
        return SamplingPlan{{39524, 27285, 2131, 999, 86}, seed};
    }

    std::size_t total() const {
        std::size_t t = 0;
        for (auto v : target) t += v;
        return t;
    }
};

/// Rebalances each coarse class to its target count. Down-sampling draws
/// without replacement; up-sampling keeps every original and adds uniform
/// draws with replacement. Surviving records keep their relative order and
/// duplicates are emitted next to their original.
inline Dataset resample(const Dataset& ds, const SamplingPlan& plan) {
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        by_class[index_of(ds.records[i].coarse_label)].push_back(i);
    }
    std::vector<std::size_t> multiplicity(ds.records.size(), 0);
    Rng rng(plan.seed);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto& members = by_class[c];
        const std::size_t n = members.size();
        const std::size_t target = plan.target[c];
        if (target > 0 && n == 0) {
            throw Error("cannot sample " + std::to_string(target) + " records of class '" +
                        std::string(to_string(class_at(c))) + "': none present");
        }
        if (target <= n) {
            // partial Fisher-Yates
            for (std::size_t i = 0; i < target; ++i) {
                std::swap(members[i], members[i + uniform_index(rng, n - i)]);
                ++multiplicity[members[i]];
            }
        } else {
            for (auto i : members) ++multiplicity[i];
            for (std::size_t extra = target - n; extra > 0; --extra) {
                ++multiplicity[members[uniform_index(rng, n)]];
            }
        }
    }
    Dataset out;
    out.provenance = ds.provenance;
    out.records.reserve(plan.total());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        for (std::size_t m = 0; m < multiplicity[i]; ++m) out.records.push_back(ds.records[i]);
    }
    return out;
}

/// Per-column population mean and standard deviation of a training set.
struct StandardizationStats {
    FeatureVector mean{};
    FeatureVector stddev{};

    /// Columns whose standard deviation is zero; they are scaled by 1.
    std::vector<std::size_t> zero_variance() const {
        std::vector<std::size_t> z;
        for (std::size_t j = 0; j < kFeatureDim; ++j) {
            if (stddev[j] == 0.0) z.push_back(j);
        }
        return z;
    }

    double divisor(std::size_t j) const { return stddev[j] == 0.0 ? 1.0 : stddev[j]; }

    FeatureVector apply(const FeatureVector& x) const {
        FeatureVector out;
        for (std::size_t j = 0; j < kFeatureDim; ++j) out[j] = (x[j] - mean[j]) / divisor(j);
        return out;
    }

    std::string serialize_body() const {
        std::string s;
        write_values(s, "mean", mean);
        write_values(s, "stddev", stddev);
        return s;
    }

    /// Content hash; models record it so that mismatched inputs are caught.
    std::string id() const { return hex64(fnv1a(serialize_body())); }

    std::string serialize() const {
        std::string s = "kddids-stats 1\n";
        s += "id " + id() + "\n";
        s += serialize_body();
        s += "zero_variance";
        for (auto j : zero_variance()) s += " " + std::to_string(j);
        s += "\n";
        return s;
    }

    static StandardizationStats parse(std::string text, const std::string& source) {
        TextReader in(std::move(text), source);
        in.expect_header("kddids-stats", 1);
        const auto id_tok = in.expect("id", 1);
        const std::string stored_id(id_tok[0]);
        StandardizationStats s;
        auto m = in.doubles("mean", kFeatureDim);
        auto d = in.doubles("stddev", kFeatureDim);
        std::copy(m.begin(), m.end(), s.mean.begin());
        std::copy(d.begin(), d.end(), s.stddev.begin());
        if (s.id() != stored_id) in.fail("stats id does not match contents");
        return s;
    }

    bool operator==(const StandardizationStats&) const = default;
};

inline StandardizationStats standardize_fit(const Dataset& ds) {
    if (ds.empty()) throw Error("cannot fit standardization on an empty dataset");
    StandardizationStats s;
    const double n = static_cast<double>(ds.size());
    for (const auto& r : ds.records) {
        for (std::size_t j = 0; j < kFeatureDim; ++j) s.mean[j] += r.x[j];
    }
    for (auto& m : s.mean) m /= n;
    FeatureVector ss{};
    for (const auto& r : ds.records) {
        for (std::size_t j = 0; j < kFeatureDim; ++j) {
            const double d = r.x[j] - s.mean[j];
            ss[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < kFeatureDim; ++j) s.stddev[j] = std::sqrt(ss[j] / n);
    return s;
}

inline FeatureVector standardize_apply(const StandardizationStats& stats,
                                       std::span<const double> x) {
    if (x.size() != kFeatureDim) {
        throw Error("dimension mismatch: expected " + std::to_string(kFeatureDim) + ", got " +
                    std::to_string(x.size()));
    }
    FeatureVector v;
    std::copy(x.begin(), x.end(), v.begin());
    return stats.apply(v);
}

inline Dataset standardize(const Dataset& ds, const StandardizationStats& stats) {
    Dataset out = ds;
    for (auto& r : out.records) r.x = stats.apply(r.x);
    return out;
}

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Stratified k-fold partition over coarse classes. Per class, fold sizes
/// differ by at most one.
inline std::vector<Fold> stratified_kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw Error("k-fold requires k >= 2");
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        by_class[index_of(ds.records[i].coarse_label)].push_back(i);
    }
    std::vector<std::size_t> fold_of(ds.records.size());
    Rng rng(seed);
    std::size_t offset = 0;  // rotates which folds get the remainders
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() < k) {
            throw Error("class '" + std::string(to_string(class_at(c))) + "' has " +
                        std::to_string(members.size()) + " records, fewer than k=" +
                        std::to_string(k));
        }
        shuffle(members, rng);
        for (std::size_t i = 0; i < members.size(); ++i) fold_of[members[i]] = (offset + i) % k;
        offset = (offset + members.size()) % k;
    }
    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        for (std::size_t f = 0; f < k; ++f) {
            (fold_of[i] == f ? folds[f].validation : folds[f].train).push_back(i);
        }
    }
    return folds;
}

/// Seeded train/test split stratified on the fine label. Every fine label
/// keeps at least one training record.
inline Fold stratified_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw Error("test fraction must be in [0, 1)");
    }
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        groups[ds.records[i].fine_label].push_back(i);
    }
    std::vector<bool> is_test(ds.records.size(), false);
    Rng rng(seed);
    for (auto& [label, members] : groups) {
        shuffle(members, rng);
        auto n_test = static_cast<std::size_t>(
            std::floor(static_cast<double>(members.size()) * test_fraction + 0.5));
        n_test = std::min(n_test, members.size() - 1);
        for (std::size_t i = 0; i < n_test; ++i) is_test[members[i]] = true;
    }
    Fold split;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        (is_test[i] ? split.validation : split.train).push_back(i);
    }
    return split;
}

/// Calls `fn(line, line_number)` for every line of a plain or gzip file.
inline void for_each_line(const std::filesystem::path& path,
                          const std::function<void(std::string_view, std::size_t)>& fn) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw Error("cannot open: " + path.string());
    std::unique_ptr<gzFile_s, int (*)(gzFile)> guard(f, gzclose);
    gzbuffer(f, 1 << 17);
    std::string line;
    std::array<char, 8192> buf{};
    std::size_t line_no = 0;
    while (gzgets(f, buf.data(), static_cast<int>(buf.size())) != nullptr) {
        const std::size_t len = std::strlen(buf.data());
        line.append(buf.data(), len);
        if (len > 0 && buf[len - 1] != '\n' && !gzeof(f)) continue;
        if (!line.empty() && line.back() == '\n') line.pop_back();
        fn(line, ++line_no);
        line.clear();
    }
    int errnum = 0;
    const char* msg = gzerror(f, &errnum);
    if (errnum != Z_OK && errnum != Z_STREAM_END) {
        throw Error("read error in " + path.string() + ": " + msg);
    }
    if (!line.empty()) fn(line, ++line_no);
}

struct KddReadResult {
    std::vector<RawRecord> records;
    std::vector<ParseError> errors;
    std::size_t lines = 0;
};

/// Reads a KDD file; blank lines are skipped and bad lines collected.
inline KddReadResult read_kdd_file(const std::filesystem::path& path) {
    KddReadResult res;
    for_each_line(path, [&](std::string_view line, std::size_t no) {
        res.lines = no;
        if (trim(line).empty()) return;
        try {
            res.records.push_back(parse_kdd_line(line, no));
        } catch (const ParseError& e) {
            res.errors.push_back(e);
        }
    });
    return res;
}

/// Processed-dataset CSV: header of the 41 encoded column names plus
/// fine_label,coarse_label, then one row per record.
inline std::string dataset_to_csv(const Dataset& ds) {
    std::string out;
    for (const auto& name : encoded_column_names()) {
        out += name;
        out += ',';
    }
    out += "fine_label,coarse_label\n";
    for (const auto& r : ds.records) {
        for (double v : r.x) {
            out += format_double(v);
            out += ',';
        }
        out += r.fine_label;
        out += ',';
        out += to_string(r.coarse_label);
        out += '\n';
    }
    return out;
}

inline Dataset dataset_from_csv(std::string_view text, const std::string& source) {
    Dataset ds;
    ds.provenance = source;
    std::size_t line_no = 0;
    bool header = true;
    for (auto line : split(text, '\n')) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        auto fail = [&](const std::string& what) -> void {
            throw FormatError(source + ":" + std::to_string(line_no) + ": " + what);
        };
        if (fields.size() != kFeatureDim + 2) fail("expected 43 fields");
        if (header) {
            for (std::size_t j = 0; j < kFeatureDim; ++j) {
                if (fields[j] != encoded_column_names()[j]) fail("unexpected header column");
            }
            header = false;
            continue;
        }
        EncodedRecord r;
        for (std::size_t j = 0; j < kFeatureDim; ++j) {
            if (!parse_double(fields[j], r.x[j])) fail("bad number in column " + std::to_string(j + 1));
        }
        r.fine_label = std::string(fields[kFeatureDim]);
        auto c = parse_coarse(fields[kFeatureDim + 1]);
        if (!c) fail("unknown coarse label");
        r.coarse_label = *c;
        ds.records.push_back(std::move(r));
    }
    if (header) throw FormatError(source + ": missing header");
    return ds;
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
    return dataset_from_csv(read_file(path), path.string());
}

}  // namespace kddids
