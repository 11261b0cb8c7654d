#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fisel/adam.hpp"
#include "fisel/errors.hpp"
#include "fisel/matrix.hpp"
#include "fisel/model.hpp"
#include "fisel/selection.hpp"

namespace fisel {

// Binary parameter container: named, typed sections in insertion order,
// 64-bit little-endian payloads, FNV-1a trailer. Loading verifies the magic,
// every section header, and the trailing hash, so truncation or bit flips
// surface as IntegrityError instead of silently corrupt parameters.
class Checkpoint {
public:
    static constexpr char kMagic[9] = "FSCK0001";

    void put_matrix(const std::string& name, const Matrix& value) {
        Entry e;
        e.type = Type::matrix;
        e.mat = value;
        insert(name, std::move(e));
    }

    void put_scalar(const std::string& name, double value) {
        Entry e;
        e.type = Type::scalar;
        e.num = value;
        insert(name, std::move(e));
    }

    void put_int(const std::string& name, std::int64_t value) {
        Entry e;
        e.type = Type::integer;
        e.i64 = value;
        insert(name, std::move(e));
    }

    void put_bytes(const std::string& name, const std::string& value) {
        Entry e;
        e.type = Type::bytes;
        e.raw = value;
        insert(name, std::move(e));
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const Matrix& matrix(const std::string& name) const {
        return find(name, Type::matrix).mat;
    }
    double scalar(const std::string& name) const { return find(name, Type::scalar).num; }
    std::int64_t integer(const std::string& name) const {
        return find(name, Type::integer).i64;
    }
    const std::string& bytes(const std::string& name) const {
        return find(name, Type::bytes).raw;
    }

    std::size_t section_count() const { return entries_.size(); }

    void save(const std::string& path) const {
        std::string blob;
        blob.append(kMagic, 8);
        append_u64(blob, entries_.size());
        for (const auto& [name, e] : entries_) {
            if (name.size() > 0xFFFF) throw ContractError("checkpoint section name too long");
            append_u16(blob, static_cast<std::uint16_t>(name.size()));
            blob.append(name);
            blob.push_back(static_cast<char>(e.type));
            switch (e.type) {
                case Type::matrix:
                    append_u64(blob, e.mat.rows());
                    append_u64(blob, e.mat.cols());
                    for (std::size_t i = 0; i < e.mat.size(); ++i) append_f64(blob, e.mat[i]);
                    break;
                case Type::scalar:
                    append_f64(blob, e.num);
                    break;
                case Type::integer:
                    append_u64(blob, static_cast<std::uint64_t>(e.i64));
                    break;
                case Type::bytes:
                    append_u64(blob, e.raw.size());
                    blob.append(e.raw);
                    break;
            }
        }
        append_u64(blob, fnv1a(blob));

        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint: " + path);
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw DataError("short write on checkpoint: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot read checkpoint: " + path);
        std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

        if (blob.size() < 8 + 8 + 8 || blob.compare(0, 8, kMagic, 8) != 0) {
            throw IntegrityError("checkpoint magic mismatch: " + path);
        }
        const std::string body = blob.substr(0, blob.size() - 8);
        std::size_t pos = blob.size() - 8;
        if (read_u64(blob, pos) != fnv1a(body)) {
            throw IntegrityError("checkpoint hash mismatch: " + path);
        }

        Checkpoint ck;
        pos = 8;
        const std::uint64_t count = read_u64(body, pos);
        for (std::uint64_t s = 0; s < count; ++s) {
            const std::uint16_t name_len = read_u16(body, pos);
            const std::string name = read_raw(body, pos, name_len);
            const auto type = static_cast<Type>(read_raw(body, pos, 1)[0]);
            Entry e;
            e.type = type;
            switch (type) {
                case Type::matrix: {
                    const std::uint64_t rows = read_u64(body, pos);
                    const std::uint64_t cols = read_u64(body, pos);
                    e.mat = Matrix(rows, cols);
                    for (std::size_t i = 0; i < e.mat.size(); ++i) e.mat[i] = read_f64(body, pos);
                    break;
                }
                case Type::scalar:
                    e.num = read_f64(body, pos);
                    break;
                case Type::integer:
                    e.i64 = static_cast<std::int64_t>(read_u64(body, pos));
                    break;
                case Type::bytes: {
                    const std::uint64_t len = read_u64(body, pos);
                    e.raw = read_raw(body, pos, len);
                    break;
                }
                default:
                    throw IntegrityError("checkpoint has unknown section type");
            }
            ck.insert(name, std::move(e));
        }
        if (pos != body.size()) throw IntegrityError("checkpoint has trailing garbage");
        return ck;
    }

private:
    enum class Type : char { matrix = 1, scalar = 2, integer = 3, bytes = 4 };

    struct Entry {
        Type type = Type::scalar;
        Matrix mat;
        double num = 0.0;
        std::int64_t i64 = 0;
        std::string raw;
    };

    void insert(const std::string& name, Entry&& e) {
        if (index_.count(name)) throw ContractError("duplicate checkpoint section: " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(e));
    }

    const Entry& find(const std::string& name, Type want) const {
        const auto it = index_.find(name);
        if (it == index_.end()) {
            throw IntegrityError("checkpoint is missing section '" + name + "'");
        }
        const Entry& e = entries_[it->second].second;
        if (e.type != want) {
            throw IntegrityError("checkpoint section '" + name + "' has the wrong type");
        }
        return e;
    }

    static void append_u16(std::string& out, std::uint16_t v) {
        out.push_back(static_cast<char>(v & 0xFF));
        out.push_back(static_cast<char>((v >> 8) & 0xFF));
    }

    static void append_u64(std::string& out, std::uint64_t v) {
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
    }

    static void append_f64(std::string& out, double v) {
        append_u64(out, std::bit_cast<std::uint64_t>(v));
    }

    static std::uint16_t read_u16(const std::string& in, std::size_t& pos) {
        if (pos + 2 > in.size()) throw IntegrityError("checkpoint truncated");
        const auto b0 = static_cast<std::uint8_t>(in[pos]);
        const auto b1 = static_cast<std::uint8_t>(in[pos + 1]);
        pos += 2;
        return static_cast<std::uint16_t>(b0 | (b1 << 8));
    }

    static std::uint64_t read_u64(const std::string& in, std::size_t& pos) {
        if (pos + 8 > in.size()) throw IntegrityError("checkpoint truncated");
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in[pos + b])) << (8 * b);
        }
        pos += 8;
        return v;
    }

    static double read_f64(const std::string& in, std::size_t& pos) {
        return std::bit_cast<double>(read_u64(in, pos));
    }

    static std::string read_raw(const std::string& in, std::size_t& pos, std::uint64_t len) {
        if (pos + len > in.size()) throw IntegrityError("checkpoint truncated");
        std::string out = in.substr(pos, len);
        pos += len;
        return out;
    }

    static std::uint64_t fnv1a(const std::string& data) {
        std::uint64_t h = 14695981039346656037ULL;
        for (char c : data) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 1099511628211ULL;
        }
        return h;
    }

    std::vector<std::pair<std::string, Entry>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---- domain (de)serialization ----------------------------------------------
// Loaders write into pre-constructed objects and verify every shape, so a
// checkpoint produced under a different configuration is rejected instead of
// silently reinterpreted.

namespace detail {

inline void get_into(const Checkpoint& ck, const std::string& name, Matrix& dst) {
    const Matrix& src = ck.matrix(name);
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
        throw IntegrityError("checkpoint section '" + name + "' is " + src.shape_str() +
                             ", expected " + dst.shape_str());
    }
    dst = src;
}

}  // namespace detail

inline void put_mlp(Checkpoint& ck, const std::string& prefix, const Mlp& mlp) {
    for (std::size_t l = 0; l < mlp.weights().size(); ++l) {
        ck.put_matrix(prefix + "/w" + std::to_string(l), mlp.weights()[l].value);
        if (mlp.use_bias()) {
            ck.put_matrix(prefix + "/b" + std::to_string(l), mlp.biases()[l].value);
        }
    }
}

inline void get_mlp(const Checkpoint& ck, const std::string& prefix, Mlp& mlp) {
    for (std::size_t l = 0; l < mlp.weights().size(); ++l) {
        detail::get_into(ck, prefix + "/w" + std::to_string(l), mlp.weights()[l].value);
        if (mlp.use_bias()) {
            detail::get_into(ck, prefix + "/b" + std::to_string(l), mlp.biases()[l].value);
        }
    }
}

inline void put_gate_net(Checkpoint& ck, const std::string& prefix, const GateNet& net) {
    ck.put_matrix(prefix + "/embedding", net.embedding().value);
    put_mlp(ck, prefix + "/net", net.net());
    ck.put_matrix(prefix + "/sigma", net.sigma().value);
}

inline void get_gate_net(const Checkpoint& ck, const std::string& prefix, GateNet& net) {
    detail::get_into(ck, prefix + "/embedding", net.embedding().value);
    get_mlp(ck, prefix + "/net", net.net());
    detail::get_into(ck, prefix + "/sigma", net.sigma().value);
}

inline void put_model(Checkpoint& ck, const Model& model) {
    ck.put_matrix("model/embedding", model.embedding().value);
    put_mlp(ck, "model/mlp", model.mlp());
}

inline void get_model(const Checkpoint& ck, Model& model) {
    detail::get_into(ck, "model/embedding", model.embedding().value);
    get_mlp(ck, "model/mlp", model.mlp());
}

inline void put_selection(Checkpoint& ck, const SelectionParams& sel) {
    put_gate_net(ck, "selection/value", sel.value_net());
    put_gate_net(ck, "selection/field", sel.field_net());
    ck.put_matrix("selection/alpha", sel.alpha().value);
    if (sel.order() == 3) ck.put_matrix("selection/alpha3", sel.alpha3().value);
}

inline void get_selection(const Checkpoint& ck, SelectionParams& sel) {
    get_gate_net(ck, "selection/value", sel.value_net());
    get_gate_net(ck, "selection/field", sel.field_net());
    detail::get_into(ck, "selection/alpha", sel.alpha().value);
    if (sel.order() == 3) detail::get_into(ck, "selection/alpha3", sel.alpha3().value);
}

inline void put_frozen(Checkpoint& ck, const FrozenSelection& frozen) {
    ck.put_int("frozen/order", frozen.order);
    ck.put_int("frozen/n_fields", static_cast<std::int64_t>(frozen.n_fields));
    ck.put_int("frozen/override", static_cast<std::int64_t>(frozen.override_mode));
    ck.put_bytes("frozen/alpha_star",
                 std::string(frozen.alpha_star.begin(), frozen.alpha_star.end()));
    ck.put_bytes("frozen/alpha_star3",
                 std::string(frozen.alpha_star3.begin(), frozen.alpha_star3.end()));
    if (frozen.override_mode == FrozenSelection::Override::none) {
        put_gate_net(ck, "frozen/value", frozen.value);
        put_gate_net(ck, "frozen/field", frozen.field);
    }
}

// `frozen` must arrive pre-constructed with the run's gate-net shapes (from
// the config); only override-mode selections skip the net payload.
inline void get_frozen(const Checkpoint& ck, FrozenSelection& frozen) {
    frozen.order = static_cast<int>(ck.integer("frozen/order"));
    frozen.n_fields = static_cast<std::size_t>(ck.integer("frozen/n_fields"));
    frozen.override_mode =
        static_cast<FrozenSelection::Override>(ck.integer("frozen/override"));
    const std::string& bits = ck.bytes("frozen/alpha_star");
    frozen.alpha_star.assign(bits.begin(), bits.end());
    const std::string& bits3 = ck.bytes("frozen/alpha_star3");
    frozen.alpha_star3.assign(bits3.begin(), bits3.end());
    if (frozen.override_mode == FrozenSelection::Override::none) {
        if (frozen.alpha_star.size() != pair_count(frozen.n_fields)) {
            throw IntegrityError("frozen selection bit count does not match its field count");
        }
        get_gate_net(ck, "frozen/value", frozen.value);
        get_gate_net(ck, "frozen/field", frozen.field);
    }
}

inline void put_adam_group(Checkpoint& ck, const std::string& prefix, AdamGroup& group) {
    auto& states = group.states();
    for (std::size_t i = 0; i < states.size(); ++i) {
        const std::string base = prefix + "/" + std::to_string(i);
        ck.put_matrix(base + "/m", states[i].m);
        ck.put_matrix(base + "/v", states[i].v);
        ck.put_int(base + "/step", states[i].step);
    }
}

inline void get_adam_group(const Checkpoint& ck, const std::string& prefix, AdamGroup& group) {
    auto& states = group.states();
    for (std::size_t i = 0; i < states.size(); ++i) {
        const std::string base = prefix + "/" + std::to_string(i);
        detail::get_into(ck, base + "/m", states[i].m);
        detail::get_into(ck, base + "/v", states[i].v);
        states[i].step = ck.integer(base + "/step");
    }
}

inline void put_rng(Checkpoint& ck, const std::string& name, const std::mt19937_64& rng) {
    std::ostringstream oss;
    oss << rng;
    ck.put_bytes(name, oss.str());
}

inline void get_rng(const Checkpoint& ck, const std::string& name, std::mt19937_64& rng) {
    std::istringstream iss(ck.bytes(name));
    iss >> rng;
    if (!iss) throw IntegrityError("checkpoint rng state is unreadable");
}

}  // namespace fisel
