#include "cipl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "cipl/error.hpp"

namespace cipl {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.append(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(const std::string& buf, size_t& off, const std::string& path) {
    if (off + 4 > buf.size()) throw IoError(path + ": truncated checkpoint");
    std::uint32_t v;
    std::memcpy(&v, buf.data() + off, 4);
    off += 4;
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::string buf;
    buf.append("CIPL", 4);
    put_u32(buf, kVersion);
    for (const auto& t : tensors) {
        put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
        buf.append(t.name);
        put_u32(buf, static_cast<std::uint32_t>(t.dims.size()));
        std::int64_t n = 1;
        for (int d : t.dims) {
            put_u32(buf, static_cast<std::uint32_t>(d));
            n *= d;
        }
        if (n != static_cast<std::int64_t>(t.data.size()))
            throw IoError("tensor '" + t.name + "' dims do not match data length");
        buf.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
    }
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    put_u32(buf, crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short write to " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "CIPL") != 0)
        throw IoError(path + ": not a CIPL checkpoint");

    const std::string body = buf.substr(0, buf.size() - 4);
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    const std::uint32_t actual_crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    if (stored_crc != actual_crc)
        throw IoError(path + ": CRC mismatch, checkpoint is corrupted");

    size_t off = 4;
    const std::uint32_t version = get_u32(body, off, path);
    if (version != kVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));

    std::vector<NamedTensor> out;
    while (off < body.size()) {
        NamedTensor t;
        const std::uint32_t name_len = get_u32(body, off, path);
        if (off + name_len > body.size()) throw IoError(path + ": truncated tensor name");
        t.name.assign(body, off, name_len);
        off += name_len;
        const std::uint32_t rank = get_u32(body, off, path);
        std::int64_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t d = get_u32(body, off, path);
            t.dims.push_back(static_cast<int>(d));
            n *= d;
        }
        if (off + static_cast<size_t>(n) * 4 > body.size())
            throw IoError(path + ": truncated tensor data for '" + t.name + "'");
        t.data.resize(static_cast<size_t>(n));
        std::memcpy(t.data.data(), body.data() + off, static_cast<size_t>(n) * 4);
        off += static_cast<size_t>(n) * 4;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace cipl
