#pragma once

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace fixture {

// Self-deleting temp file.
class TempFile {
public:
    explicit TempFile(std::span<const std::byte> content) {
        char tmpl[] = "/tmp/tokleak_test_XXXXXX";
        const int fd = mkstemp(tmpl);
        if (fd < 0) {
            std::perror("mkstemp");
            std::abort();
        }
        path_ = tmpl;
        size_t off = 0;
        while (off < content.size()) {
            const ssize_t n = write(fd, content.data() + off, content.size() - off);
            if (n <= 0) {
                std::perror("write");
                std::abort();
            }
            off += size_t(n);
        }
        close(fd);
    }

    explicit TempFile(const std::string& text)
        : TempFile(std::as_bytes(std::span(text.data(), text.size()))) {}

    static TempFile zeros(size_t size) {
        std::vector<std::byte> z(size, std::byte(1)); // non-zero so pages are distinct
        return TempFile(std::span<const std::byte>(z));
    }

    ~TempFile() { ::unlink(path_.c_str()); }
    TempFile(const TempFile&) = delete;
    TempFile& operator=(const TempFile&) = delete;
    TempFile(TempFile&& o) noexcept : path_(std::move(o.path_)) { o.path_.clear(); }

    const std::string& path() const { return path_; }

private:
    std::string path_;
};

} // namespace fixture
