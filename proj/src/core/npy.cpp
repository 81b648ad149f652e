#include "core/npy.hpp"

#include <cstring>
#include <fstream>

#include "core/error.hpp"

namespace vton::npy {

namespace {
constexpr char kMagic[] = "\x93NUMPY";
}

void save(const std::string& path, const Tensor& t) {
    std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (";
    for (size_t i = 0; i < t.shape().size(); ++i) {
        dict += std::to_string(t.shape()[i]);
        if (t.shape().size() == 1 || i + 1 < t.shape().size()) dict += ",";
        if (i + 1 < t.shape().size()) dict += " ";
    }
    dict += "), }";
    // Pad so that the full header (magic + version + len + dict + '\n') is a
    // multiple of 64 bytes, as the format requires.
    size_t header_len = 6 + 2 + 2 + dict.size() + 1;
    size_t pad = (64 - header_len % 64) % 64;
    dict += std::string(pad, ' ');
    dict += '\n';

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(kMagic, 6);
    const char version[2] = {1, 0};
    f.write(version, 2);
    const uint16_t dlen = uint16_t(dict.size());
    f.write(reinterpret_cast<const char*>(&dlen), 2);
    f.write(dict.data(), std::streamsize(dict.size()));
    f.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 8));
    if (!f) throw IoError("write failed: " + path);
}

Tensor load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, kMagic, 6) != 0) throw IoError("not an npy file: " + path);
    char version[2];
    f.read(version, 2);
    uint16_t dlen = 0;
    f.read(reinterpret_cast<char*>(&dlen), 2);
    std::string dict(dlen, '\0');
    f.read(dict.data(), dlen);
    if (!f) throw IoError("truncated npy header: " + path);

    if (dict.find("'<f8'") == std::string::npos)
        throw IoError("unsupported npy dtype (expected <f8): " + path);
    if (dict.find("'fortran_order': False") == std::string::npos)
        throw IoError("fortran-ordered npy not supported: " + path);

    auto lp = dict.find('(');
    auto rp = dict.find(')', lp);
    if (lp == std::string::npos || rp == std::string::npos) throw IoError("bad npy shape in: " + path);
    Shape shape;
    std::string inner = dict.substr(lp + 1, rp - lp - 1);
    size_t pos = 0;
    while (pos < inner.size()) {
        while (pos < inner.size() && (inner[pos] == ' ' || inner[pos] == ',')) ++pos;
        if (pos >= inner.size()) break;
        size_t end = pos;
        while (end < inner.size() && isdigit(inner[end])) ++end;
        if (end == pos) throw IoError("bad npy shape in: " + path);
        shape.push_back(std::stoll(inner.substr(pos, end - pos)));
        pos = end;
    }
    if (shape.empty()) shape = {1};  // 0-d scalar array

    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 8));
    if (!f) throw IoError("truncated npy data: " + path);
    return t;
}

uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for hashing: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a_bytes(buf, size_t(f.gcount()), h);
    }
    return h;
}

}  // namespace vton::npy
