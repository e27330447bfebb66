#ifndef LEMOL_PARAMS_HPP
#define LEMOL_PARAMS_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lemol/binary_io.hpp"
#include "lemol/tensor.hpp"

namespace lemol {

using NamedTensors = std::map<std::string, Tensor>;

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Named trainable tensors with their Adam moments.
///
/// Iteration is in lexicographic name order, so anything derived from a walk
/// over the store (checkpoints, gradient checks, hashes) is deterministic.
class ParamStore {
  public:
    struct Entry {
        Tensor value;
        Tensor m;
        Tensor v;
        std::uint64_t t = 0;
    };

    void add(const std::string& name, Tensor value) {
        if (entries_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        Entry e;
        e.m = Tensor::zeros_like(value);
        e.v = Tensor::zeros_like(value);
        e.value = std::move(value);
        entries_.emplace(name, std::move(e));
    }

    void add_entry(const std::string& name, Entry e) {
        if (e.m.shape() != e.value.shape() || e.v.shape() != e.value.shape())
            throw ShapeError("adam moments for '" + name + "' do not match parameter shape");
        if (!entries_.emplace(name, std::move(e)).second)
            throw std::invalid_argument("duplicate parameter '" + name + "'");
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    const Entry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }
    Entry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }

    const Tensor& value(const std::string& name) const { return entry(name).value; }
    Tensor& value(const std::string& name) { return entry(name).value; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [k, _] : entries_) out.push_back(k);
        return out;
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    /// Copies values only; the optimiser state of the copy starts fresh.
    ParamStore values_only() const {
        ParamStore out;
        for (const auto& [k, e] : entries_) out.add(k, e.value);
        return out;
    }

    friend bool operator==(const ParamStore& a, const ParamStore& b) {
        if (a.entries_.size() != b.entries_.size()) return false;
        for (auto ia = a.entries_.begin(), ib = b.entries_.begin(); ia != a.entries_.end(); ++ia, ++ib) {
            if (ia->first != ib->first) return false;
            const Entry& x = ia->second;
            const Entry& y = ib->second;
            if (!(x.value == y.value && x.m == y.m && x.v == y.v && x.t == y.t)) return false;
        }
        return true;
    }

  private:
    std::map<std::string, Entry> entries_;
};

/// One Adam step with bias correction, applied in place to every parameter
/// named in `grads`. Each touched parameter's step counter advances by one.
inline void adam_step(ParamStore& store, const NamedTensors& grads, const AdamConfig& cfg) {
    for (const auto& [name, g] : grads) {
        if (!store.contains(name)) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
        if (store.value(name).shape() != g.shape())
            throw ShapeError("gradient for '" + name + "' has shape " + shape_str(g.shape()) + ", parameter is " +
                             shape_str(store.value(name).shape()));
    }
    for (const auto& [name, g] : grads) {
        auto& e = store.entry(name);
        e.t += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.t));
        double* p = e.value.ptr();
        double* m = e.m.ptr();
        double* v = e.v.ptr();
        const double* gp = g.ptr();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gp[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gp[i] * gp[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

/// target <- (1 - tau) * target + tau * source, for every parameter.
inline void polyak_update(ParamStore& target, const ParamStore& source, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak tau must lie in [0, 1]");
    if (target.size() != source.size()) throw std::invalid_argument("polyak_update: parameter sets differ in size");
    auto is = source.begin();
    for (auto it = target.begin(); it != target.end(); ++it, ++is) {
        if (it->first != is->first)
            throw std::invalid_argument("polyak_update: name mismatch '" + it->first + "' vs '" + is->first + "'");
        if (it->second.value.shape() != is->second.value.shape())
            throw ShapeError("polyak_update: shape mismatch for '" + it->first + "'");
    }
    is = source.begin();
    for (auto it = target.begin(); it != target.end(); ++it, ++is) {
        double* t = it->second.value.ptr();
        const double* s = is->second.value.ptr();
        for (std::size_t i = 0; i < it->second.value.size(); ++i) t[i] = (1.0 - tau) * t[i] + tau * s[i];
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: "LMOL" | u16 version | u64 count | per tensor: name, rank, dims,
// f64 payload. Adam state is written as <name>.adam_m / .adam_v / .adam_t.

inline constexpr char kCheckpointMagic[4] = {'L', 'M', 'O', 'L'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_tensor(io::Writer& w, const std::string& name, const Tensor& t) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double x : t.data()) w.f64(x);
}

inline std::pair<std::string, Tensor> get_tensor(io::Reader& r) {
    std::string name = r.str();
    r.set_section("tensor '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = r.u64();
        if (d > (std::size_t{1} << 32)) r.fail("dimension too large");
        n *= d;
    }
    if (n * 8 > r.remaining()) r.fail("truncated payload");
    Vec data(n);
    for (auto& x : data) x = r.f64();
    try {
        return {std::move(name), Tensor(std::move(shape), std::move(data))};
    } catch (const std::exception& e) {
        r.fail(e.what());
    }
}

}  // namespace detail

/// Serialises several stores into one checkpoint. Each tensor is written as
/// "<store>/<param>", so the store labels act as the manifest.
inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<std::pair<std::string, const ParamStore*>>& stores) {
    std::vector<std::uint8_t> out;
    io::Writer w(out);
    w.bytes(kCheckpointMagic, 4);
    w.u16(kCheckpointVersion);
    std::uint64_t count = 0;
    for (const auto& [_, s] : stores) count += 4 * s->size();
    w.u64(count);
    for (const auto& [label, s] : stores) {
        for (const auto& [name, e] : *s) {
            const std::string full = label.empty() ? name : label + "/" + name;
            detail::put_tensor(w, full, e.value);
            detail::put_tensor(w, full + ".adam_m", e.m);
            detail::put_tensor(w, full + ".adam_v", e.v);
            detail::put_tensor(w, full + ".adam_t", Tensor::scalar(static_cast<double>(e.t)));
        }
    }
    return out;
}

inline std::map<std::string, ParamStore> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    io::Reader r(bytes.data(), bytes.size());
    const auto* magic = r.take(4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) r.fail("bad magic (not an LMOL checkpoint)");
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
    const std::uint64_t count = r.u64();
    NamedTensors flat;
    for (std::uint64_t i = 0; i < count; ++i) {
        r.set_section("tensor #" + std::to_string(i));
        auto [name, t] = detail::get_tensor(r);
        if (!flat.emplace(name, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
    }
    r.set_section("trailer");
    if (r.remaining() != 0) r.fail("unexpected trailing bytes");

    auto ends_with = [](const std::string& s, const std::string& suf) {
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };
    std::map<std::string, ParamStore> stores;
    for (const auto& [full, t] : flat) {
        if (ends_with(full, ".adam_m") || ends_with(full, ".adam_v") || ends_with(full, ".adam_t")) continue;
        auto find = [&](const std::string& key) -> const Tensor& {
            auto it = flat.find(key);
            if (it == flat.end()) throw io::FormatError("tensor '" + full + "'", "missing " + key);
            return it->second;
        };
        ParamStore::Entry e;
        e.value = t;
        e.m = find(full + ".adam_m");
        e.v = find(full + ".adam_v");
        const double tt = find(full + ".adam_t").item();
        if (tt < 0 || tt != std::floor(tt)) throw io::FormatError("tensor '" + full + "'", "bad adam step counter");
        e.t = static_cast<std::uint64_t>(tt);
        const auto slash = full.find('/');
        const std::string label = slash == std::string::npos ? "" : full.substr(0, slash);
        const std::string name = slash == std::string::npos ? full : full.substr(slash + 1);
        try {
            stores[label].add_entry(name, std::move(e));
        } catch (const std::exception& ex) {
            throw io::FormatError("tensor '" + full + "'", ex.what());
        }
    }
    return stores;
}

inline void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, const ParamStore*>>& stores) {
    io::write_file(path, encode_checkpoint(stores));
}

inline std::map<std::string, ParamStore> load_checkpoint(const std::string& path) {
    return decode_checkpoint(io::read_file(path));
}

}  // namespace lemol

#endif
