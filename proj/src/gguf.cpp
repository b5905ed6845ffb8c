#include "tokleak/gguf.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_set>

#include "tokleak/errors.hpp"

namespace tokleak::gguf {

namespace {

// Bounds-checked little-endian cursor. Every read is validated against the
// declared span, so truncated or hostile inputs produce truncated_file
// instead of reading out of bounds.
class Reader {
public:
    explicit Reader(std::span<const std::byte> data) : data_(data) {}

    uint64_t pos() const { return pos_; }
    uint64_t remaining() const { return data_.size() - pos_; }

    void require(uint64_t n, const char* what) {
        if (n > remaining()) {
            fail(errc::truncated_file, std::string(what) + " extends past end of file");
        }
    }

    template <typename T>
    T scalar(const char* what) {
        static_assert(std::is_trivially_copyable_v<T>);
        require(sizeof(T), what);
        T out;
        std::memcpy(&out, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return out;
    }

    std::string string(const char* what) {
        const uint64_t len = scalar<uint64_t>(what);
        require(len, what);
        std::string out(reinterpret_cast<const char*>(data_.data() + pos_), len);
        pos_ += len;
        return out;
    }

private:
    std::span<const std::byte> data_;
    uint64_t pos_ = 0;
};

Value read_value(Reader& r, ValueType type, int depth);

Value read_array(Reader& r, int depth) {
    if (depth > 8) fail(errc::truncated_file, "metadata array nesting too deep");
    const auto elem_type = ValueType(r.scalar<uint32_t>("array element type"));
    const uint64_t count = r.scalar<uint64_t>("array length");
    Value v;
    v.type = ValueType::array;
    ValueArray arr;
    // Cheap pre-check so a hostile length fails before any allocation growth.
    r.require(count == 0 ? 0 : 1, "array contents");
    arr.reserve(std::min<uint64_t>(count, r.remaining()));
    for (uint64_t i = 0; i < count; ++i) {
        arr.push_back(read_value(r, elem_type, depth + 1));
    }
    v.data = std::move(arr);
    return v;
}

Value read_value(Reader& r, ValueType type, int depth) {
    Value v;
    v.type = type;
    switch (type) {
        case ValueType::uint8:   v.data = uint64_t(r.scalar<uint8_t>("u8 value")); break;
        case ValueType::int8:    v.data = int64_t(r.scalar<int8_t>("i8 value")); break;
        case ValueType::uint16:  v.data = uint64_t(r.scalar<uint16_t>("u16 value")); break;
        case ValueType::int16:   v.data = int64_t(r.scalar<int16_t>("i16 value")); break;
        case ValueType::uint32:  v.data = uint64_t(r.scalar<uint32_t>("u32 value")); break;
        case ValueType::int32:   v.data = int64_t(r.scalar<int32_t>("i32 value")); break;
        case ValueType::float32: v.data = double(r.scalar<float>("f32 value")); break;
        case ValueType::boolean: v.data = bool(r.scalar<uint8_t>("bool value") != 0); break;
        case ValueType::string:  v.data = r.string("string value"); break;
        case ValueType::array:   return read_array(r, depth);
        case ValueType::uint64:  v.data = r.scalar<uint64_t>("u64 value"); break;
        case ValueType::int64:   v.data = r.scalar<int64_t>("i64 value"); break;
        case ValueType::float64: v.data = r.scalar<double>("f64 value"); break;
        default:
            fail(errc::truncated_file, "unknown metadata value type " +
                                           std::to_string(uint32_t(type)));
    }
    return v;
}

uint64_t align_up(uint64_t x, uint64_t alignment) {
    return (x + alignment - 1) / alignment * alignment;
}

} // namespace

uint64_t Value::as_uint() const {
    if (auto* u = std::get_if<uint64_t>(&data)) return *u;
    if (auto* i = std::get_if<int64_t>(&data)) return uint64_t(*i);
    fail(errc::invalid_argument, "metadata value is not an integer");
}

int64_t Value::as_int() const {
    if (auto* i = std::get_if<int64_t>(&data)) return *i;
    if (auto* u = std::get_if<uint64_t>(&data)) return int64_t(*u);
    fail(errc::invalid_argument, "metadata value is not an integer");
}

double Value::as_float() const {
    if (auto* f = std::get_if<double>(&data)) return *f;
    if (auto* u = std::get_if<uint64_t>(&data)) return double(*u);
    if (auto* i = std::get_if<int64_t>(&data)) return double(*i);
    fail(errc::invalid_argument, "metadata value is not numeric");
}

const Value* GgufModel::find_meta(std::string_view key) const {
    for (const auto& [k, v] : metadata) {
        if (k == key) return &v;
    }
    return nullptr;
}

const TensorInfo* GgufModel::find_tensor(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::optional<TypeSize> dtype_size(uint32_t dtype_code) {
    // Block geometry per dtype code: {elements per block, bytes per block}.
    // Codes 4 and 5 were retired from the format and never reassigned.
    switch (dtype_code) {
        case 0:  return TypeSize{1, 4};     // F32
        case 1:  return TypeSize{1, 2};     // F16
        case 2:  return TypeSize{32, 18};   // Q4_0
        case 3:  return TypeSize{32, 20};   // Q4_1
        case 6:  return TypeSize{32, 22};   // Q5_0
        case 7:  return TypeSize{32, 24};   // Q5_1
        case 8:  return TypeSize{32, 34};   // Q8_0
        case 9:  return TypeSize{32, 36};   // Q8_1
        case 10: return TypeSize{256, 84};  // Q2_K
        case 11: return TypeSize{256, 110}; // Q3_K
        case 12: return TypeSize{256, 144}; // Q4_K
        case 13: return TypeSize{256, 176}; // Q5_K
        case 14: return TypeSize{256, 210}; // Q6_K
        case 15: return TypeSize{256, 292}; // Q8_K
        case 16: return TypeSize{256, 66};  // IQ2_XXS
        case 17: return TypeSize{256, 74};  // IQ2_XS
        case 18: return TypeSize{256, 98};  // IQ3_XXS
        case 19: return TypeSize{256, 50};  // IQ1_S
        case 20: return TypeSize{32, 18};   // IQ4_NL
        case 21: return TypeSize{256, 110}; // IQ3_S
        case 22: return TypeSize{256, 82};  // IQ2_S
        case 23: return TypeSize{256, 136}; // IQ4_XS
        case 24: return TypeSize{1, 1};     // I8
        case 25: return TypeSize{1, 2};     // I16
        case 26: return TypeSize{1, 4};     // I32
        case 27: return TypeSize{1, 8};     // I64
        case 28: return TypeSize{1, 8};     // F64
        case 29: return TypeSize{256, 56};  // IQ1_M
        case 30: return TypeSize{1, 2};     // BF16
        default: return std::nullopt;
    }
}

std::optional<uint64_t> tensor_byte_size(const TensorInfo& info) {
    const auto ts = dtype_size(info.dtype_code);
    if (!ts) return std::nullopt;
    if (info.dims.empty()) return 0;
    // Row layout: dims[0] elements per row, blocked by the dtype.
    if (info.dims[0] % ts->block_elems != 0) {
        fail(errc::indivisible_size,
             "tensor '" + info.name + "' row extent " + std::to_string(info.dims[0]) +
                 " is not a multiple of the dtype block size " +
                 std::to_string(ts->block_elems));
    }
    uint64_t bytes = info.dims[0] / ts->block_elems * ts->block_bytes;
    for (size_t i = 1; i < info.dims.size(); ++i) {
        bytes *= info.dims[i];
    }
    return bytes;
}

GgufModel parse_gguf(std::span<const std::byte> file) {
    Reader r(file);

    r.require(4, "magic");
    const uint8_t* magic = reinterpret_cast<const uint8_t*>(file.data());
    if (!(magic[0] == 0x47 && magic[1] == 0x47 && magic[2] == 0x55 && magic[3] == 0x46)) {
        fail(errc::bad_magic, "file does not start with GGUF magic bytes");
    }
    (void)r.scalar<uint32_t>("magic");

    GgufModel model;
    model.file_size = file.size();
    model.version = r.scalar<uint32_t>("version");
    if (model.version != 2 && model.version != 3) {
        fail(errc::unsupported_version,
             "version " + std::to_string(model.version) + " (supported: 2, 3)");
    }

    model.tensor_count = r.scalar<uint64_t>("tensor count");
    const uint64_t kv_count = r.scalar<uint64_t>("metadata kv count");

    for (uint64_t i = 0; i < kv_count; ++i) {
        std::string key = r.string("metadata key");
        const auto type = ValueType(r.scalar<uint32_t>("metadata value type"));
        model.metadata.emplace_back(std::move(key), read_value(r, type, 0));
    }

    model.alignment = kDefaultAlignment;
    if (const Value* a = model.find_meta("general.alignment")) {
        model.alignment = a->as_uint();
        if (model.alignment == 0 || (model.alignment & (model.alignment - 1)) != 0) {
            fail(errc::misaligned_offset, "general.alignment must be a power of two");
        }
    }

    std::unordered_set<std::string_view> names;
    model.tensors.reserve(std::min<uint64_t>(model.tensor_count, r.remaining()));
    for (uint64_t i = 0; i < model.tensor_count; ++i) {
        TensorInfo t;
        t.name = r.string("tensor name");
        t.n_dims = r.scalar<uint32_t>("tensor n_dims");
        if (t.n_dims > 8) {
            fail(errc::truncated_file, "tensor '" + t.name + "' declares " +
                                           std::to_string(t.n_dims) + " dimensions");
        }
        for (uint32_t d = 0; d < t.n_dims; ++d) {
            t.dims.push_back(r.scalar<uint64_t>("tensor dim"));
        }
        t.dtype_code = r.scalar<uint32_t>("tensor dtype");
        t.rel_offset = r.scalar<uint64_t>("tensor offset");
        if (t.rel_offset % model.alignment != 0) {
            fail(errc::misaligned_offset,
                 "tensor '" + t.name + "' offset " + std::to_string(t.rel_offset) +
                     " is not aligned to " + std::to_string(model.alignment));
        }
        model.tensors.push_back(std::move(t));
    }
    for (const auto& t : model.tensors) {
        if (!names.insert(t.name).second) {
            fail(errc::duplicate_tensor_name, "tensor '" + t.name + "' appears twice");
        }
    }

    model.data_base = align_up(r.pos(), model.alignment);

    // Tensor payloads are never read here, but each declared region must fit
    // inside the file when its size is computable.
    for (const auto& t : model.tensors) {
        if (model.data_base > model.file_size ||
            t.rel_offset > model.file_size - model.data_base) {
            fail(errc::truncated_file,
                 "tensor '" + t.name + "' data offset extends past end of file");
        }
        const auto known = dtype_size(t.dtype_code);
        if (known) {
            const uint64_t bytes = *tensor_byte_size(t);
            if (bytes > model.file_size - model.data_base - t.rel_offset) {
                fail(errc::truncated_file,
                     "tensor '" + t.name + "' data extends past end of file");
            }
        }
    }

    return model;
}

VocabTable extract_vocab(const GgufModel& model, std::string_view vocab_key) {
    const Value* v = model.find_meta(vocab_key);
    if (!v) {
        fail(errc::missing_vocab_key,
             "metadata has no '" + std::string(vocab_key) + "' entry");
    }
    if (!v->is_array()) {
        fail(errc::non_string_vocab_entry,
             "'" + std::string(vocab_key) + "' is not an array");
    }
    VocabTable vocab;
    vocab.tokens.reserve(v->as_array().size());
    for (const Value& e : v->as_array()) {
        if (!e.is_string()) {
            fail(errc::non_string_vocab_entry,
                 "vocab entry " + std::to_string(vocab.tokens.size()) + " is not a string");
        }
        vocab.tokens.push_back(e.as_string());
    }
    for (uint32_t id = 0; id < vocab.tokens.size(); ++id) {
        vocab.reverse.emplace(vocab.tokens[id], id); // keeps the lowest id on duplicates
    }
    return vocab;
}

EmbeddingLayout locate_embedding(const GgufModel& model,
                                 std::string_view tensor_name,
                                 uint64_t num_tokens) {
    const TensorInfo* t = model.find_tensor(tensor_name);
    if (!t) {
        fail(errc::no_such_tensor, "no tensor named '" + std::string(tensor_name) + "'");
    }
    const auto bytes = tensor_byte_size(*t);
    if (!bytes) {
        fail(errc::unknown_dtype,
             "tensor '" + t->name + "' has unknown dtype code " +
                 std::to_string(t->dtype_code) + "; size-dependent operations refused");
    }
    if (num_tokens == 0) {
        fail(errc::invalid_argument, "num_tokens must be positive");
    }
    if (*bytes % num_tokens != 0) {
        fail(errc::indivisible_size,
             "layer size " + std::to_string(*bytes) + " is not divisible by " +
                 std::to_string(num_tokens) + " tokens");
    }
    EmbeddingLayout layout;
    layout.layer_offset = model.data_base + t->rel_offset;
    layout.layer_size = *bytes;
    layout.num_tokens = num_tokens;
    layout.token_stride = *bytes / num_tokens;
    if (layout.layer_offset + layout.layer_size > model.file_size) {
        fail(errc::truncated_file, "embedding layer extends past end of file");
    }
    return layout;
}

EmbeddingLayout locate_embedding_for_vocab(const GgufModel& model,
                                           std::string_view tensor_name,
                                           const VocabTable& vocab) {
    const TensorInfo* t = model.find_tensor(tensor_name);
    if (!t) {
        fail(errc::no_such_tensor, "no tensor named '" + std::string(tensor_name) + "'");
    }
    if (t->dims.size() >= 2 && t->dims.back() != vocab.size()) {
        fail(errc::vocab_size_mismatch,
             "vocab has " + std::to_string(vocab.size()) + " tokens but tensor '" +
                 t->name + "' has " + std::to_string(t->dims.back()) + " rows");
    }
    return locate_embedding(model, tensor_name, vocab.size());
}

uint64_t token_offset(const EmbeddingLayout& layout, uint64_t token_id) {
    if (token_id >= layout.num_tokens) {
        fail(errc::token_out_of_range,
             "token " + std::to_string(token_id) + " >= " +
                 std::to_string(layout.num_tokens));
    }
    return layout.layer_offset + token_id * layout.token_stride;
}

std::vector<uint64_t> cacheline_targets(const EmbeddingLayout& layout,
                                        uint64_t token_id,
                                        uint64_t line_size) {
    if (line_size == 0 || (line_size & (line_size - 1)) != 0) {
        fail(errc::invalid_argument, "line size must be a power of two");
    }
    const uint64_t begin = token_offset(layout, token_id);
    const uint64_t end = begin + layout.token_stride;
    std::vector<uint64_t> lines;
    for (uint64_t line = begin & ~(line_size - 1); line < end; line += line_size) {
        lines.push_back(line);
    }
    return lines;
}

} // namespace tokleak::gguf
