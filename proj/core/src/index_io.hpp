#pragma once
// Little-endian binary readers/writers for .frix index files. The reader
// tracks its offset so truncation errors can name the exact position.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "finrag/errors.hpp"

namespace finrag::detail {

constexpr char kIndexMagic[4] = {'F', 'R', 'I', 'X'};
constexpr std::uint16_t kIndexVersion = 1;
constexpr std::uint8_t kMetricCosineDot = 0;

class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path)
        : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
        if (!out_)
            throw DataError("cannot open for writing: " + path_);
    }

    template <typename T> void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }

    void put_bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }

    void put_string(const std::string& s) {
        if (s.size() > UINT16_MAX)
            throw DataError("string too long for index file: " + path_);
        put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        put_bytes(s.data(), s.size());
    }

    void finish() {
        out_.flush();
        if (!out_)
            throw DataError("write failed: " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw DataError("cannot open index file: " + path_);
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    template <typename T> T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        if (pos_ + sizeof(T) > buf_.size())
            throw DataError(path_ + ": truncated index file at offset " +
                            std::to_string(pos_));
        T value;
        std::memcpy(&value, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string get_string() {
        const auto len = get<std::uint16_t>();
        if (pos_ + len > buf_.size())
            throw DataError(path_ + ": truncated index file at offset " +
                            std::to_string(pos_));
        std::string s(buf_.data() + pos_, len);
        pos_ += len;
        return s;
    }

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == buf_.size(); }
    const std::string& path() const { return path_; }

private:
    std::vector<char> buf_;
    std::size_t pos_ = 0;
    std::string path_;
};

} // namespace finrag::detail
