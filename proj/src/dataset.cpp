#include "tfe/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tfe::prior {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'D', '1'};

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("TFD1: truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        }
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        }
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

std::string serialize_tfd(const Dataset& ds) {
    std::string out;
    out.append(kMagic, 4);
    put_u64(out, ds.n_rows);
    put_u64(out, ds.n_features);
    put_u8(out, static_cast<std::uint8_t>(ds.task));
    put_u32(out, ds.n_classes);
    for (const ColKind& k : ds.col_kinds) {
        put_u8(out, k.categorical ? 1 : 0);
        put_u32(out, k.cardinality);
    }
    for (std::size_t c = 0; c < ds.n_features; ++c) {
        for (std::size_t r = 0; r < ds.n_rows; ++r) put_f64(out, ds.cell(r, c));
    }
    for (double v : ds.y) put_f64(out, v);
    for (std::uint8_t s : ds.split) put_u8(out, s);
    return out;
}

}  // namespace

std::size_t Dataset::n_train() const {
    std::size_t n = 0;
    for (std::uint8_t s : split) n += (s == 0);
    return n;
}

std::size_t Dataset::n_test() const { return n_rows - n_train(); }

void Dataset::validate() const {
    if (x.size() != n_rows * n_features || nan_mask.size() != x.size() ||
        y.size() != n_rows || split.size() != n_rows || col_kinds.size() != n_features) {
        throw IoError("dataset: inconsistent container sizes");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) != (nan_mask[i] != 0)) {
            throw IoError("dataset: nan_mask does not match NaN cells");
        }
        if (!std::isnan(x[i]) && !std::isfinite(x[i])) {
            throw IoError("dataset: non-finite cell");
        }
    }
    if (task == Task::classification) {
        if (n_classes < 2) throw ConfigError("dataset: classification needs >= 2 classes");
        for (double v : y) {
            if (v < 0 || v >= n_classes || v != std::floor(v)) {
                throw IoError("dataset: class label out of range");
            }
        }
    }
    for (std::size_t c = 0; c < n_features; ++c) {
        if (!col_kinds[c].categorical) continue;
        for (std::size_t r = 0; r < n_rows; ++r) {
            const double v = cell(r, c);
            if (std::isnan(v)) continue;
            if (v < 0 || v >= col_kinds[c].cardinality || v != std::floor(v)) {
                throw IoError("dataset: categorical value outside its cardinality");
            }
        }
    }
}

void save_tfd(const Dataset& ds, const std::string& path) {
    ds.validate();
    const std::string bytes = serialize_tfd(ds);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

Dataset load_tfd(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw IoError("TFD1: bad magic");
    }
    Reader r{buf, 4};
    Dataset ds;
    ds.n_rows = r.u64();
    ds.n_features = r.u64();
    ds.task = static_cast<Task>(r.u8());
    ds.n_classes = r.u32();
    ds.col_kinds.resize(ds.n_features);
    for (ColKind& k : ds.col_kinds) {
        k.categorical = r.u8() != 0;
        k.cardinality = r.u32();
    }
    ds.x.assign(ds.n_rows * ds.n_features, 0.0);
    ds.nan_mask.assign(ds.n_rows * ds.n_features, 0);
    for (std::size_t c = 0; c < ds.n_features; ++c) {
        for (std::size_t row = 0; row < ds.n_rows; ++row) {
            const double v = r.f64();
            ds.x[row * ds.n_features + c] = v;
            ds.nan_mask[row * ds.n_features + c] = std::isnan(v) ? 1 : 0;
        }
    }
    ds.y.resize(ds.n_rows);
    for (double& v : ds.y) v = r.f64();
    ds.split.resize(ds.n_rows);
    for (std::uint8_t& s : ds.split) s = r.u8();
    if (r.pos != buf.size()) throw IoError("TFD1: trailing bytes");
    ds.validate();
    return ds;
}

void export_csv(const Dataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (std::size_t c = 0; c < ds.n_features; ++c) f << "f" << c << ",";
    f << "target,split\n";
    char buf[64];
    for (std::size_t r = 0; r < ds.n_rows; ++r) {
        for (std::size_t c = 0; c < ds.n_features; ++c) {
            if (ds.missing(r, c)) {
                f << "NaN";
            } else {
                std::snprintf(buf, sizeof(buf), "%.17g", ds.cell(r, c));
                f << buf;
            }
            f << ",";
        }
        std::snprintf(buf, sizeof(buf), "%.17g", ds.y[r]);
        f << buf << "," << (ds.split[r] == 0 ? "train" : "test") << "\n";
    }
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t dataset_checksum(const Dataset& ds) {
    const std::string bytes = serialize_tfd(ds);
    return fnv1a(bytes.data(), bytes.size());
}

}  // namespace tfe::prior
