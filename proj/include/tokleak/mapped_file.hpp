#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace tokleak {

// Read-only shared mapping of a file. MAP_SHARED matters: when the victim and
// the monitor map the same model file, both see the same physical page-cache
// pages, which is exactly the sharing Flush+Reload needs.
class MappedFile {
public:
    MappedFile() = default;
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;
    MappedFile(MappedFile&& other) noexcept;
    MappedFile& operator=(MappedFile&& other) noexcept;
    ~MappedFile();

    static MappedFile open(const std::string& path);

    const std::byte* data() const { return data_; }
    size_t size() const { return size_; }
    bool valid() const { return data_ != nullptr; }
    const std::string& path() const { return path_; }

    bool contains(uint64_t offset, uint64_t length = 1) const {
        return offset < size_ && length <= size_ - offset;
    }

    std::span<const std::byte> bytes() const { return {data_, size_}; }

    const uint8_t* u8(uint64_t offset) const {
        return reinterpret_cast<const uint8_t*>(data_) + offset;
    }

private:
    const std::byte* data_ = nullptr;
    size_t size_ = 0;
    std::string path_;
};

} // namespace tokleak
