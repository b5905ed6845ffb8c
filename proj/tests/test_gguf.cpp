#include <doctest.h>

#include <functional>
#include <set>

#include "support/gguf_builder.hpp"
#include "tokleak/errors.hpp"
#include "tokleak/gguf.hpp"
#include "tokleak/rng.hpp"

using namespace tokleak;
using namespace tokleak::gguf;

namespace {

GgufModel parse_built(const fixture::BuiltFile& built) {
    return parse_gguf(built.bytes);
}

errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return errc::io_error;
}

// Randomized file spec for round-trip checks.
fixture::FileSpec random_spec(CounterRng& rng) {
    fixture::FileSpec spec;
    spec.version = rng.bounded(2) ? 3 : 2;
    static constexpr uint64_t kAligns[] = {32, 64, 128};
    spec.alignment = kAligns[rng.bounded(3)];
    spec.emit_alignment_key = spec.alignment != 32 || rng.bounded(2);

    const uint64_t n_kv = rng.bounded(6);
    for (uint64_t i = 0; i < n_kv; ++i) {
        const std::string key = "test.key" + std::to_string(i);
        switch (rng.bounded(6)) {
            case 0: spec.kvs.push_back({key, uint32_t(rng.bounded(1u << 30))}); break;
            case 1: spec.kvs.push_back({key, uint64_t(rng.next_u64() >> 8)}); break;
            case 2: spec.kvs.push_back({key, float(rng.next_unit())}); break;
            case 3: spec.kvs.push_back({key, rng.bounded(2) != 0}); break;
            case 4: spec.kvs.push_back({key, std::string("value") + std::to_string(i)}); break;
            default: {
                fixture::StrArray arr;
                const uint64_t len = rng.bounded(5);
                for (uint64_t k = 0; k < len; ++k) arr.items.push_back("s" + std::to_string(k));
                spec.kvs.push_back({key, arr});
            }
        }
    }

    static constexpr uint32_t kDtypes[] = {0, 1, 8, 12, 24, 30}; // f32,f16,q8_0,q4_k,i8,bf16
    const uint64_t n_tensors = rng.bounded(4);
    for (uint64_t i = 0; i < n_tensors; ++i) {
        fixture::TensorSpec t;
        t.name = "tensor." + std::to_string(i);
        t.dtype_code = kDtypes[rng.bounded(6)];
        const uint64_t block = dtype_size(t.dtype_code)->block_elems;
        t.dims = {block * (1 + rng.bounded(8)), 1 + rng.bounded(16)};
        if (rng.bounded(3) == 0) t.dims.push_back(1 + rng.bounded(3));
        spec.tensors.push_back(t);
    }
    return spec;
}

void check_round_trip(const fixture::FileSpec& spec) {
    const auto built = fixture::build(spec);
    const GgufModel model = parse_built(built);

    CHECK(model.version == spec.version);
    CHECK(model.alignment == spec.alignment);
    CHECK(model.tensor_count == spec.tensors.size());
    CHECK(model.tensors.size() == spec.tensors.size());
    CHECK(model.data_base == built.data_base);
    CHECK(model.data_base % model.alignment == 0);

    const size_t meta_extra = spec.emit_alignment_key ? 1 : 0;
    CHECK(model.metadata.size() == spec.kvs.size() + meta_extra);
    for (const auto& kv : spec.kvs) {
        const Value* v = model.find_meta(kv.key);
        REQUIRE(v != nullptr);
        std::visit(
            [&](const auto& want) {
                using T = std::decay_t<decltype(want)>;
                if constexpr (std::is_same_v<T, uint32_t> || std::is_same_v<T, uint64_t>) {
                    CHECK(v->as_uint() == uint64_t(want));
                } else if constexpr (std::is_same_v<T, int32_t> || std::is_same_v<T, int64_t>) {
                    CHECK(v->as_int() == int64_t(want));
                } else if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
                    CHECK(v->as_float() == doctest::Approx(double(want)));
                } else if constexpr (std::is_same_v<T, bool>) {
                    CHECK(std::get<bool>(v->data) == want);
                } else if constexpr (std::is_same_v<T, std::string>) {
                    CHECK(v->as_string() == want);
                } else if constexpr (std::is_same_v<T, fixture::StrArray>) {
                    REQUIRE(v->is_array());
                    REQUIRE(v->as_array().size() == want.items.size());
                    for (size_t i = 0; i < want.items.size(); ++i) {
                        CHECK(v->as_array()[i].as_string() == want.items[i]);
                    }
                } else if constexpr (std::is_same_v<T, fixture::I32Array>) {
                    REQUIRE(v->is_array());
                    REQUIRE(v->as_array().size() == want.items.size());
                    for (size_t i = 0; i < want.items.size(); ++i) {
                        CHECK(v->as_array()[i].as_int() == want.items[i]);
                    }
                }
            },
            kv.value);
    }

    for (size_t i = 0; i < spec.tensors.size(); ++i) {
        const TensorInfo& t = model.tensors[i];
        CHECK(t.name == spec.tensors[i].name);
        CHECK(t.n_dims == spec.tensors[i].dims.size());
        CHECK(t.dims == spec.tensors[i].dims);
        CHECK(t.dtype_code == spec.tensors[i].dtype_code);
        CHECK(t.rel_offset == built.rel_offsets[i]);
        CHECK(*tensor_byte_size(t) == fixture::payload_size(spec.tensors[i]));
    }
}

} // namespace

TEST_SUITE("gguf") {

TEST_CASE("smallest well-formed file") {
    fixture::FileSpec spec;
    spec.version = 3;
    const auto built = fixture::build(spec);
    const GgufModel model = parse_built(built);
    CHECK(model.version == 3);
    CHECK(model.tensor_count == 0);
    CHECK(model.tensors.empty());
    CHECK(model.metadata.empty());
}

TEST_CASE("bad magic") {
    fixture::FileSpec spec;
    auto built = fixture::build(spec);
    built.bytes[0] = std::byte('X');
    CHECK(code_of([&] { parse_built(built); }) == errc::bad_magic);
}

TEST_CASE("unsupported versions rejected loudly") {
    for (uint32_t version : {0u, 1u, 4u, 100u}) {
        fixture::FileSpec spec;
        spec.version = version;
        const auto built = fixture::build(spec);
        CHECK(code_of([&] { parse_built(built); }) == errc::unsupported_version);
    }
}

TEST_CASE("single tensor fixture matches writer values") {
    fixture::FileSpec spec;
    spec.tensors.push_back({"token_embd.weight", {8, 16}, 0, 0});
    const auto built = fixture::build(spec);
    const GgufModel model = parse_built(built);
    REQUIRE(model.tensors.size() == 1);
    const TensorInfo& t = model.tensors[0];
    CHECK(t.name == "token_embd.weight");
    CHECK(t.dims == std::vector<uint64_t>{8, 16});
    CHECK(t.rel_offset == 0);
    CHECK(*tensor_byte_size(t) == 8 * 16 * 4);
}

TEST_CASE("100 randomized specs round-trip") {
    CounterRng rng(20260808, 1);
    for (int i = 0; i < 100; ++i) {
        check_round_trip(random_spec(rng));
    }
}

TEST_CASE("duplicate tensor names rejected") {
    fixture::FileSpec spec;
    spec.tensors.push_back({"dup", {32, 2}, 8, 0});
    spec.tensors.push_back({"dup", {32, 2}, 8, 0});
    const auto built = fixture::build(spec);
    CHECK(code_of([&] { parse_built(built); }) == errc::duplicate_tensor_name);
}

TEST_CASE("truncation fuzzing: every prefix is TruncatedFile or success") {
    CounterRng rng(555, 2);
    fixture::FileSpec spec = random_spec(rng);
    spec.tensors.push_back({"tail.tensor", {64, 3}, 1, 0});
    const auto built = fixture::build(spec);
    size_t successes = 0;
    for (size_t len = 0; len < built.bytes.size(); ++len) {
        std::span<const std::byte> prefix(built.bytes.data(), len);
        try {
            (void)parse_gguf(prefix);
            ++successes;
        } catch (const error& e) {
            const bool expected = e.code() == errc::truncated_file ||
                                  (len < 4 && e.code() == errc::bad_magic);
            if (!expected) {
                CAPTURE(len);
                CAPTURE(e.what());
                CHECK(expected);
            }
        }
    }
    // Prefixes that cut tensor payloads must not parse as complete files.
    CHECK(successes == 0);
    CHECK_NOTHROW((void)parse_built(built));
}

TEST_CASE("hostile string length does not crash") {
    fixture::Writer w;
    w.raw("GGUF", 4);
    w.le<uint32_t>(3);
    w.le<uint64_t>(0);          // tensors
    w.le<uint64_t>(1);          // one kv
    w.le<uint64_t>(0xFFFFFFFFFFFFFFFFull); // absurd key length
    const auto bytes = w.take();
    CHECK(code_of([&] { (void)parse_gguf(bytes); }) == errc::truncated_file);
}

TEST_CASE("vocab extraction") {
    fixture::FileSpec spec;
    spec.kvs.push_back({"tokenizer.ggml.tokens", fixture::StrArray{{"<s>", "a", "b"}}});
    const GgufModel model = parse_built(fixture::build(spec));
    const VocabTable vocab = extract_vocab(model);
    REQUIRE(vocab.size() == 3);
    CHECK(vocab.tokens[0] == "<s>");
    CHECK(vocab.reverse.at("b") == 2);

    SUBCASE("missing key") {
        fixture::FileSpec bare;
        const GgufModel m2 = parse_built(fixture::build(bare));
        CHECK(code_of([&] { extract_vocab(m2); }) == errc::missing_vocab_key);
    }
    SUBCASE("non-string entry") {
        fixture::FileSpec bad;
        bad.kvs.push_back({"tokenizer.ggml.tokens", fixture::I32Array{{1, 2}}});
        const GgufModel m3 = parse_built(fixture::build(bad));
        CHECK(code_of([&] { extract_vocab(m3); }) == errc::non_string_vocab_entry);
    }
}

TEST_CASE("100-entry vocab round-trips through reverse") {
    fixture::StrArray tokens;
    for (int i = 0; i < 100; ++i) tokens.items.push_back("tok" + std::to_string(i));
    fixture::FileSpec spec;
    spec.kvs.push_back({"tokenizer.ggml.tokens", tokens});
    const VocabTable vocab = extract_vocab(parse_built(fixture::build(spec)));
    REQUIRE(vocab.size() == 100);
    for (uint32_t i = 0; i < 100; ++i) {
        CHECK(vocab.reverse.at(vocab.tokens[i]) == i);
    }
}

TEST_CASE("locate_embedding arithmetic") {
    // data_base 4096: alignment 4096 puts the payload exactly there.
    fixture::FileSpec spec;
    spec.alignment = 4096;
    spec.emit_alignment_key = true;
    spec.tensors.push_back({"token_embd.weight", {2048, 10}, 0, 0}); // 81920 bytes f32
    const auto built = fixture::build(spec);
    const GgufModel model = parse_built(built);
    REQUIRE(model.data_base == 4096);

    const EmbeddingLayout layout = locate_embedding(model, "token_embd.weight", 10);
    CHECK(layout.layer_offset == 4096);
    CHECK(layout.layer_size == 81920);
    CHECK(layout.token_stride == 8192);

    SUBCASE("indivisible token count") {
        CHECK(code_of([&] { locate_embedding(model, "token_embd.weight", 7); }) ==
              errc::indivisible_size);
    }
    SUBCASE("missing tensor") {
        CHECK(code_of([&] { locate_embedding(model, "nope", 10); }) ==
              errc::no_such_tensor);
    }
    SUBCASE("token offsets") {
        CHECK(token_offset(layout, 0) == 4096);
        CHECK(token_offset(layout, 3) == 28672);
        CHECK(code_of([&] { token_offset(layout, 10); }) == errc::token_out_of_range);
    }
}

TEST_CASE("stride computed from byte size for quantized dtypes") {
    // Q8_0: block 32 elems -> 34 bytes, so bytes != elements * 4.
    fixture::FileSpec spec;
    spec.tensors.push_back({"token_embd.weight", {256, 10}, 8, 0});
    const GgufModel model = parse_built(fixture::build(spec));
    const EmbeddingLayout layout = locate_embedding(model, "token_embd.weight", 10);
    CHECK(layout.layer_size == 256 / 32 * 34 * 10);
    CHECK(layout.token_stride == 256 / 32 * 34);
    CHECK(layout.token_stride != 256 * 4);
}

TEST_CASE("unknown dtype parses but refuses size-dependent operations") {
    fixture::FileSpec spec;
    spec.tensors.push_back({"weird.tensor", {8, 2}, 200, /*payload_bytes=*/64});
    const GgufModel model = parse_built(fixture::build(spec));
    REQUIRE(model.tensors.size() == 1);
    CHECK(!tensor_byte_size(model.tensors[0]).has_value());
    CHECK(code_of([&] { locate_embedding(model, "weird.tensor", 2); }) ==
          errc::unknown_dtype);
}

TEST_CASE("vocab-derived layout cross-checks the token dimension") {
    fixture::StrArray tokens;
    for (int i = 0; i < 4; ++i) tokens.items.push_back(std::string(1, char('a' + i)));
    fixture::FileSpec spec;
    spec.kvs.push_back({"tokenizer.ggml.tokens", tokens});
    spec.tensors.push_back({"token_embd.weight", {16, 4}, 0, 0});
    const GgufModel model = parse_built(fixture::build(spec));
    const VocabTable vocab = extract_vocab(model);
    const EmbeddingLayout layout = locate_embedding_for_vocab(model, "token_embd.weight", vocab);
    CHECK(layout.num_tokens == 4);

    fixture::FileSpec bad = spec;
    bad.tensors[0].dims = {16, 5};
    const GgufModel model2 = parse_built(fixture::build(bad));
    CHECK(code_of([&] { locate_embedding_for_vocab(model2, "token_embd.weight", vocab); }) ==
          errc::vocab_size_mismatch);
}

TEST_CASE("cacheline targets") {
    EmbeddingLayout layout;
    layout.layer_offset = 4096;
    layout.layer_size = 128 * 10;
    layout.num_tokens = 10;
    layout.token_stride = 128;
    CHECK(cacheline_targets(layout, 0, 64) == std::vector<uint64_t>{4096, 4160});

    SUBCASE("unaligned layer, stride smaller than a line") {
        EmbeddingLayout odd;
        odd.layer_offset = 4100;
        odd.layer_size = 60 * 4;
        odd.num_tokens = 4;
        odd.token_stride = 60;
        CHECK(cacheline_targets(odd, 0, 64) == std::vector<uint64_t>{4096});
    }
    SUBCASE("line size must be a power of two") {
        CHECK(code_of([&] { cacheline_targets(layout, 0, 48); }) ==
              errc::invalid_argument);
    }
}

TEST_CASE("token offsets tile the layer exactly") {
    CounterRng rng(777, 3);
    for (int trial = 0; trial < 50; ++trial) {
        EmbeddingLayout layout;
        layout.num_tokens = 1 + rng.bounded(40);
        layout.token_stride = (1 + rng.bounded(64)) * 4;
        layout.layer_size = layout.num_tokens * layout.token_stride;
        layout.layer_offset = rng.bounded(1 << 20);
        const uint64_t line = uint64_t(16) << rng.bounded(4); // 16..128

        // Eq-style linearity and exact tiling.
        for (uint64_t id = 0; id + 1 < layout.num_tokens; ++id) {
            CHECK(token_offset(layout, id + 1) - token_offset(layout, id) ==
                  layout.token_stride);
        }
        CHECK(token_offset(layout, 0) == layout.layer_offset);
        CHECK(token_offset(layout, layout.num_tokens - 1) + layout.token_stride ==
              layout.layer_offset + layout.layer_size);

        // Union of per-token line targets covers the layer without gaps.
        std::set<uint64_t> lines;
        for (uint64_t id = 0; id < layout.num_tokens; ++id) {
            for (uint64_t l : cacheline_targets(layout, id, line)) lines.insert(l);
        }
        const uint64_t first = layout.layer_offset & ~(line - 1);
        const uint64_t end = layout.layer_offset + layout.layer_size;
        std::set<uint64_t> expected;
        for (uint64_t l = first; l < end; l += line) expected.insert(l);
        CHECK(lines == expected);
    }
}

} // TEST_SUITE
