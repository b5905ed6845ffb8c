#include "tokleak/errors.hpp"

namespace tokleak {

const char* errc_name(errc code) {
    switch (code) {
        case errc::bad_magic: return "BadMagic";
        case errc::unsupported_version: return "UnsupportedVersion";
        case errc::truncated_file: return "TruncatedFile";
        case errc::duplicate_tensor_name: return "DuplicateTensorName";
        case errc::misaligned_offset: return "MisalignedOffset";
        case errc::missing_vocab_key: return "MissingVocabKey";
        case errc::non_string_vocab_entry: return "NonStringVocabEntry";
        case errc::no_such_tensor: return "NoSuchTensor";
        case errc::indivisible_size: return "IndivisibleSize";
        case errc::token_out_of_range: return "TokenOutOfRange";
        case errc::unknown_dtype: return "UnknownDtype";
        case errc::vocab_size_mismatch: return "VocabSizeMismatch";
        case errc::unsupported_platform: return "UnsupportedPlatform";
        case errc::unmapped_address: return "UnmappedAddress";
        case errc::distributions_overlap: return "DistributionsOverlap";
        case errc::region_too_small: return "RegionTooSmall";
        case errc::trace_token_out_of_range: return "TraceTokenOutOfRange";
        case errc::file_mismatch: return "FileMismatch";
        case errc::empty_set: return "EmptySet";
        case errc::not_calibrated: return "NotCalibrated";
        case errc::empty_grid: return "EmptyGrid";
        case errc::empty_sizes: return "EmptySizes";
        case errc::uncovered_character: return "UncoveredCharacter";
        case errc::empty_corpus: return "EmptyCorpus";
        case errc::set_size_zero: return "SetSizeZero";
        case errc::unsorted_input: return "UnsortedInput";
        case errc::invalid_argument: return "InvalidArgument";
        case errc::io_error: return "IoError";
    }
    return "UnknownError";
}

} // namespace tokleak
