#include "tokleak/mapped_file.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

#include "tokleak/errors.hpp"

namespace tokleak {

MappedFile::MappedFile(MappedFile&& other) noexcept
    : data_(std::exchange(other.data_, nullptr)),
      size_(std::exchange(other.size_, 0)),
      path_(std::move(other.path_)) {}

MappedFile& MappedFile::operator=(MappedFile&& other) noexcept {
    if (this != &other) {
        this->~MappedFile();
        data_ = std::exchange(other.data_, nullptr);
        size_ = std::exchange(other.size_, 0);
        path_ = std::move(other.path_);
    }
    return *this;
}

MappedFile::~MappedFile() {
    if (data_) {
        munmap(const_cast<std::byte*>(data_), size_);
    }
}

MappedFile MappedFile::open(const std::string& path) {
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) {
        fail(errc::io_error, "cannot open '" + path + "': " + std::strerror(errno));
    }
    struct stat st{};
    if (fstat(fd, &st) != 0) {
        const int err = errno;
        ::close(fd);
        fail(errc::io_error, "cannot stat '" + path + "': " + std::strerror(err));
    }
    if (st.st_size == 0) {
        ::close(fd);
        fail(errc::io_error, "'" + path + "' is empty");
    }
    void* p = mmap(nullptr, size_t(st.st_size), PROT_READ, MAP_SHARED, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED) {
        fail(errc::io_error, "cannot map '" + path + "': " + std::strerror(errno));
    }
    MappedFile out;
    out.data_ = static_cast<const std::byte*>(p);
    out.size_ = size_t(st.st_size);
    out.path_ = path;
    return out;
}

} // namespace tokleak
