// Little-endian binary primitives and the named-tensor record codec shared by
// checkpoint files and feature-extractor weight files.
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "awnet/tensor.hpp"

namespace awnet::io {

class SerializationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename U>
void write_le(std::ostream& os, U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i)
        os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
inline void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<std::uint32_t>(v)); }

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

template <typename U>
U read_le(std::istream& is) {
    static_assert(std::is_unsigned_v<U>);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        const int c = is.get();
        if (c == EOF) throw SerializationError("unexpected end of file");
        v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

inline std::uint16_t read_u16(std::istream& is) { return read_le<std::uint16_t>(is); }
inline std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
inline std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_le<std::uint32_t>(is)); }

inline std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw SerializationError("unexpected end of file in string");
    return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const char* what) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::string(buf, 4) != std::string(magic, 4))
        throw SerializationError(std::string(what) + ": bad magic");
}

// One record: name, shape, f32 payload.
struct TensorRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline void write_record(std::ostream& os, const TensorRecord& r) {
    write_string(os, r.name);
    write_u32(os, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) write_u64(os, d);
    for (float v : r.data) write_f32(os, v);
}

inline TensorRecord read_record(std::istream& is) {
    TensorRecord r;
    r.name = read_string(is);
    const std::uint32_t rank = read_u32(is);
    r.shape.resize(rank);
    for (auto& d : r.shape) d = read_u64(is);
    r.data.resize(shape_numel(r.shape));
    for (auto& v : r.data) v = read_f32(is);
    return r;
}

inline void write_records(std::ostream& os, const std::vector<TensorRecord>& records) {
    write_u64(os, records.size());
    for (const auto& r : records) write_record(os, r);
}

inline std::vector<TensorRecord> read_records(std::istream& is) {
    const std::uint64_t count = read_u64(is);
    std::vector<TensorRecord> records;
    records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) records.push_back(read_record(is));
    return records;
}

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
    TensorRecord r;
    r.name = name;
    r.shape = t.shape();
    r.data.assign(t.data().begin(), t.data().end());
    return r;
}

}  // namespace awnet::io
