#ifndef RSONET_CHECKPOINT_HPP
#define RSONET_CHECKPOINT_HPP

// Binary snapshot format for parameters, optimizer slots, and run metadata.
//
// Layout (all integers little-endian):
//   "RSON"                          4 bytes magic
//   u32 version (currently 1)
//   u32 entry count
//   per entry, in ascending name order:
//     u32 name length, name bytes (utf-8)
//     u32 ndim, ndim x u64 dims
//     u32 dtype tag (0 = f32)
//     numel x f32 payload
//   u64 FNV-1a checksum over everything above
//
// Names are namespaced: "param/..." for model weights, "opt/v/..." and
// "opt/m/..." for optimizer accumulators, "meta/..." for scalars such as
// the step counter. Readers must consume an exact inventory: missing,
// unexpected, and shape-mismatched names are all reported together.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rsonet/common.hpp"
#include "rsonet/tensor.hpp"

namespace rsonet {

struct CheckpointEntry {
    std::vector<int> shape;
    std::vector<float> data;
};

// std::map keeps the on-disk ordering requirement for free.
using CheckpointMap = std::map<std::string, CheckpointEntry>;

namespace ckpt_detail {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n,
                           std::uint64_t h = kFnvOffset) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_f32(std::vector<unsigned char>& b, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(b, bits);
}

// Cursor with hard bounds checks; any overrun is a truncation error.
struct Reader {
    const unsigned char* p;
    std::size_t n, pos = 0;

    void need(std::size_t k) const {
        if (pos + k > n)
            throw CheckpointError(CheckpointError::Kind::Truncated,
                                  "checkpoint ends early at byte " + std::to_string(pos));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(std::size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + pos), k);
        pos += k;
        return s;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace ckpt_detail

inline void write_checkpoint(const std::string& path, const CheckpointMap& entries) {
    using namespace ckpt_detail;
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), {'R', 'S', 'O', 'N'});
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, entry] : entries) {
        std::int64_t want = 1;
        for (int d : entry.shape) want *= d;
        if (want != static_cast<std::int64_t>(entry.data.size()))
            throw ValueError("checkpoint entry " + name + " shape/payload mismatch");
        put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        put_u32(buf, static_cast<std::uint32_t>(entry.shape.size()));
        for (int d : entry.shape) put_u64(buf, static_cast<std::uint64_t>(d));
        put_u32(buf, kDtypeF32);
        for (float v : entry.data) put_f32(buf, v);
    }
    const std::uint64_t sum = fnv1a(buf.data(), buf.size());
    put_u64(buf, sum);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "short write to " + path);
}

inline CheckpointMap read_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 4 + 4 + 4 + 8)
        throw CheckpointError(CheckpointError::Kind::Truncated,
                              path + " is too small to be a checkpoint");
    const std::uint64_t stored = [&] {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(buf[buf.size() - 8 + static_cast<std::size_t>(i)]) << (8 * i);
        return v;
    }();
    if (fnv1a(buf.data(), buf.size() - 8) != stored)
        throw CheckpointError(CheckpointError::Kind::Checksum, "checksum mismatch in " + path);

    Reader r{buf.data(), buf.size() - 8};
    if (r.str(4) != "RSON")
        throw CheckpointError(CheckpointError::Kind::BadMagic, path + " lacks the RSON magic");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw CheckpointError(CheckpointError::Kind::Version,
                              "unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    CheckpointMap out;
    std::string prev;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        if (e > 0 && !(prev < name))
            throw CheckpointError(CheckpointError::Kind::Inventory,
                                  "entry names out of order near " + name);
        prev = name;
        const std::uint32_t ndim = r.u32();
        CheckpointEntry entry;
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const std::uint64_t dim = r.u64();
            if (dim == 0 || dim > (1u << 30))
                throw CheckpointError(CheckpointError::Kind::Truncated,
                                      "implausible dimension in " + name);
            entry.shape.push_back(static_cast<int>(dim));
            numel *= static_cast<std::int64_t>(dim);
        }
        const std::uint32_t dtype = r.u32();
        if (dtype != kDtypeF32)
            throw CheckpointError(CheckpointError::Kind::Version,
                                  "unsupported dtype tag " + std::to_string(dtype) + " in " + name);
        entry.data.resize(static_cast<std::size_t>(numel));
        for (std::int64_t i = 0; i < numel; ++i)
            entry.data[static_cast<std::size_t>(i)] = r.f32();
        out.emplace(std::move(name), std::move(entry));
    }
    if (r.pos != r.n)
        throw CheckpointError(CheckpointError::Kind::Truncated,
                              std::to_string(r.n - r.pos) + " trailing bytes in " + path);
    return out;
}

// --- tensor bridging -------------------------------------------------------

template <class T>
CheckpointEntry to_entry(const Tensor<T>& t) {
    CheckpointEntry e;
    e.shape = t.shape();
    e.data.reserve(static_cast<std::size_t>(t.numel()));
    for (T v : t.data()) e.data.push_back(static_cast<float>(v));
    return e;
}

inline CheckpointEntry scalar_entry(double v) {
    return CheckpointEntry{{1}, {static_cast<float>(v)}};
}

// Copies stored values into an existing name->tensor map, insisting the
// inventories match exactly. All problems are gathered before throwing so a
// bad restore names everything wrong at once.
template <class T>
void load_into(const CheckpointMap& stored, const std::string& ns,
               std::map<std::string, Tensor<T>>& live) {
    std::vector<std::string> problems;
    for (auto& [name, tensor] : live) {
        const auto it = stored.find(ns + name);
        if (it == stored.end()) {
            problems.push_back("missing " + ns + name);
            continue;
        }
        if (it->second.shape != tensor.shape())
            problems.push_back("shape mismatch for " + ns + name + ": file " +
                               shape_str(it->second.shape) + " vs model " +
                               shape_str(tensor.shape()));
    }
    for (const auto& [name, entry] : stored) {
        if (name.rfind(ns, 0) != 0) continue;
        if (!live.count(name.substr(ns.size()))) problems.push_back("unexpected " + name);
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint inventory mismatch:";
        for (const std::string& p : problems) msg += "\n  " + p;
        throw CheckpointError(CheckpointError::Kind::Inventory, msg);
    }
    for (auto& [name, tensor] : live) {
        const CheckpointEntry& e = stored.at(ns + name);
        std::vector<T>& dst = tensor.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e.data[i]);
        tensor.clear_grad();
    }
}

}  // namespace rsonet

#endif
