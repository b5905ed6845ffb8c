#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace tokleak::gguf {

// Metadata value type codes as stored on disk.
enum class ValueType : uint32_t {
    uint8 = 0,
    int8 = 1,
    uint16 = 2,
    int16 = 3,
    uint32 = 4,
    int32 = 5,
    float32 = 6,
    boolean = 7,
    string = 8,
    array = 9,
    uint64 = 10,
    int64 = 11,
    float64 = 12,
};

struct Value;
using ValueArray = std::vector<Value>;

struct Value {
    ValueType type = ValueType::uint8;
    std::variant<uint64_t, int64_t, double, bool, std::string, ValueArray> data;

    bool is_string() const { return std::holds_alternative<std::string>(data); }
    bool is_array() const { return std::holds_alternative<ValueArray>(data); }
    const std::string& as_string() const { return std::get<std::string>(data); }
    const ValueArray& as_array() const { return std::get<ValueArray>(data); }
    uint64_t as_uint() const;
    int64_t as_int() const;
    double as_float() const;
};

struct TensorInfo {
    std::string name;
    uint32_t n_dims = 0;
    std::vector<uint64_t> dims; // dims[0] is the fastest-varying extent
    uint32_t dtype_code = 0;
    uint64_t rel_offset = 0;    // relative to the aligned data section
};

struct GgufModel {
    uint32_t version = 0;
    uint64_t tensor_count = 0;
    std::vector<std::pair<std::string, Value>> metadata; // file order
    std::vector<TensorInfo> tensors;
    uint64_t data_base = 0;  // absolute byte offset of the tensor-data section
    uint64_t alignment = 32;
    uint64_t file_size = 0;

    const Value* find_meta(std::string_view key) const;
    const TensorInfo* find_tensor(std::string_view name) const;
};

struct VocabTable {
    std::vector<std::string> tokens;                    // indexed by token id
    std::unordered_map<std::string, uint32_t> reverse;  // token -> lowest id

    size_t size() const { return tokens.size(); }
};

struct EmbeddingLayout {
    uint64_t layer_offset = 0; // absolute, data_base + rel_offset
    uint64_t layer_size = 0;
    uint64_t num_tokens = 0;
    uint64_t token_stride = 0; // layer_size / num_tokens, exact
};

inline constexpr std::string_view kDefaultEmbeddingTensor = "token_embd.weight";
inline constexpr std::string_view kDefaultVocabKey = "tokenizer.ggml.tokens";
inline constexpr uint64_t kDefaultAlignment = 32;

// Block geometry of a tensor dtype: elements per block, bytes per block.
struct TypeSize {
    uint64_t block_elems;
    uint64_t block_bytes;
};
std::optional<TypeSize> dtype_size(uint32_t dtype_code);

// Total byte size of a tensor, row-based: dims[0] must be divisible by the
// dtype block size. nullopt when the dtype code is unknown.
std::optional<uint64_t> tensor_byte_size(const TensorInfo& info);

GgufModel parse_gguf(std::span<const std::byte> file);

VocabTable extract_vocab(const GgufModel& model,
                         std::string_view vocab_key = kDefaultVocabKey);

EmbeddingLayout locate_embedding(const GgufModel& model,
                                 std::string_view tensor_name,
                                 uint64_t num_tokens);

// Derives num_tokens from the vocab and cross-checks it against the embedding
// tensor's slowest dimension; a mismatch is an error because the per-token
// stride depends on it.
EmbeddingLayout locate_embedding_for_vocab(const GgufModel& model,
                                           std::string_view tensor_name,
                                           const VocabTable& vocab);

uint64_t token_offset(const EmbeddingLayout& layout, uint64_t token_id);

// Line-aligned offsets covering [token_offset, token_offset + stride),
// ascending; the first entry is the token's designated probe line.
std::vector<uint64_t> cacheline_targets(const EmbeddingLayout& layout,
                                        uint64_t token_id,
                                        uint64_t line_size = 64);

} // namespace tokleak::gguf
