#pragma once

// Test-only GGUF fixture writer. Emits files byte by byte from its own
// understanding of the format, independent of the parser under test, so a
// parse(build(spec)) comparison is a genuine round trip.

#include <cstdint>
#include <cstring>
#include <string>
#include <variant>
#include <vector>

namespace fixture {

struct StrArray {
    std::vector<std::string> items;
};
struct I32Array {
    std::vector<int32_t> items;
};

using KvValue = std::variant<uint32_t, uint64_t, int32_t, int64_t, float, double,
                             bool, std::string, StrArray, I32Array>;

struct Kv {
    std::string key;
    KvValue value;
};

struct TensorSpec {
    std::string name;
    std::vector<uint64_t> dims; // dims[0] = fastest
    uint32_t dtype_code = 0;
    // Payload size override for exotic dtypes; 0 = compute from the type table.
    uint64_t payload_bytes = 0;
};

struct FileSpec {
    uint32_t version = 3;
    uint64_t alignment = 32;
    bool emit_alignment_key = false;
    std::vector<Kv> kvs;
    std::vector<TensorSpec> tensors;
    uint64_t trailing_padding = 0; // extra bytes after the last payload
};

class Writer {
public:
    void u8(uint8_t v) { bytes_.push_back(std::byte(v)); }
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const std::byte*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    template <typename T>
    void le(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        raw(&v, sizeof(v)); // host is little-endian x86
    }
    void str(const std::string& s) {
        le<uint64_t>(s.size());
        raw(s.data(), s.size());
    }
    void pad_to(uint64_t alignment, uint8_t fill = 0) {
        while (bytes_.size() % alignment != 0) u8(fill);
    }
    size_t size() const { return bytes_.size(); }
    std::vector<std::byte> take() { return std::move(bytes_); }

private:
    std::vector<std::byte> bytes_;
};

// Bytes per payload, from the writer's own copy of the dtype table.
inline uint64_t payload_size(const TensorSpec& t) {
    if (t.payload_bytes) return t.payload_bytes;
    struct Row {
        uint32_t code;
        uint64_t elems, bytes;
    };
    static constexpr Row kRows[] = {
        {0, 1, 4},    {1, 1, 2},    {2, 32, 18},  {3, 32, 20},  {6, 32, 22},
        {7, 32, 24},  {8, 32, 34},  {9, 32, 36},  {10, 256, 84}, {11, 256, 110},
        {12, 256, 144}, {13, 256, 176}, {14, 256, 210}, {15, 256, 292},
        {24, 1, 1},   {25, 1, 2},   {26, 1, 4},   {27, 1, 8},   {28, 1, 8},
        {30, 1, 2},
    };
    for (const Row& r : kRows) {
        if (r.code == t.dtype_code) {
            uint64_t total = t.dims.empty() ? 0 : t.dims[0] / r.elems * r.bytes;
            for (size_t i = 1; i < t.dims.size(); ++i) total *= t.dims[i];
            return total;
        }
    }
    return 0; // unknown dtype: caller must give payload_bytes
}

inline void write_kv(Writer& w, const Kv& kv) {
    w.str(kv.key);
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, uint32_t>) {
                w.le<uint32_t>(4);
                w.le<uint32_t>(v);
            } else if constexpr (std::is_same_v<T, uint64_t>) {
                w.le<uint32_t>(10);
                w.le<uint64_t>(v);
            } else if constexpr (std::is_same_v<T, int32_t>) {
                w.le<uint32_t>(5);
                w.le<int32_t>(v);
            } else if constexpr (std::is_same_v<T, int64_t>) {
                w.le<uint32_t>(11);
                w.le<int64_t>(v);
            } else if constexpr (std::is_same_v<T, float>) {
                w.le<uint32_t>(6);
                w.le<float>(v);
            } else if constexpr (std::is_same_v<T, double>) {
                w.le<uint32_t>(12);
                w.le<double>(v);
            } else if constexpr (std::is_same_v<T, bool>) {
                w.le<uint32_t>(7);
                w.u8(v ? 1 : 0);
            } else if constexpr (std::is_same_v<T, std::string>) {
                w.le<uint32_t>(8);
                w.str(v);
            } else if constexpr (std::is_same_v<T, StrArray>) {
                w.le<uint32_t>(9);
                w.le<uint32_t>(8); // element type: string
                w.le<uint64_t>(v.items.size());
                for (const auto& s : v.items) w.str(s);
            } else if constexpr (std::is_same_v<T, I32Array>) {
                w.le<uint32_t>(9);
                w.le<uint32_t>(5); // element type: int32
                w.le<uint64_t>(v.items.size());
                for (int32_t x : v.items) w.le<int32_t>(x);
            }
        },
        kv.value);
}

struct BuiltFile {
    std::vector<std::byte> bytes;
    uint64_t data_base = 0;
    std::vector<uint64_t> rel_offsets; // one per tensor, writer-computed
};

inline BuiltFile build(const FileSpec& spec) {
    Writer w;
    w.raw("GGUF", 4);
    w.le<uint32_t>(spec.version);
    w.le<uint64_t>(spec.tensors.size());

    std::vector<Kv> kvs = spec.kvs;
    if (spec.emit_alignment_key) {
        kvs.insert(kvs.begin(), Kv{"general.alignment", uint32_t(spec.alignment)});
    }
    w.le<uint64_t>(kvs.size());
    for (const Kv& kv : kvs) write_kv(w, kv);

    // Writer-side offset computation: payloads packed in order, each aligned.
    std::vector<uint64_t> rel(spec.tensors.size());
    uint64_t cursor = 0;
    for (size_t i = 0; i < spec.tensors.size(); ++i) {
        cursor = (cursor + spec.alignment - 1) / spec.alignment * spec.alignment;
        rel[i] = cursor;
        cursor += payload_size(spec.tensors[i]);
    }

    for (size_t i = 0; i < spec.tensors.size(); ++i) {
        const TensorSpec& t = spec.tensors[i];
        w.str(t.name);
        w.le<uint32_t>(uint32_t(t.dims.size()));
        for (uint64_t d : t.dims) w.le<uint64_t>(d);
        w.le<uint32_t>(t.dtype_code);
        w.le<uint64_t>(rel[i]);
    }

    w.pad_to(spec.alignment);
    const uint64_t data_base = w.size();

    for (size_t i = 0; i < spec.tensors.size(); ++i) {
        while (w.size() - data_base < rel[i]) w.u8(0);
        const uint64_t n = payload_size(spec.tensors[i]);
        for (uint64_t b = 0; b < n; ++b) w.u8(uint8_t((i * 131 + b) & 0xFF));
    }
    for (uint64_t i = 0; i < spec.trailing_padding; ++i) w.u8(0);

    BuiltFile out;
    out.bytes = w.take();
    out.data_base = data_base;
    out.rel_offsets = std::move(rel);
    return out;
}

} // namespace fixture
