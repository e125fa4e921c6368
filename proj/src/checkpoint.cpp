#include "dae/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "dae/errors.hpp"

namespace dae {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

struct Reader {
    const std::string& buf;
    const std::string& origin;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(origin + ": " + what + " at byte " + std::to_string(pos));
    }
    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size()) fail(std::string("truncated ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const auto v = static_cast<std::uint16_t>(
            static_cast<unsigned char>(buf[pos]) |
            (static_cast<unsigned char>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]);
        pos += 4;
        return v;
    }
};

} // namespace

void save_daec(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::string out;
    out += "DAEC";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xffff)
            throw ContractError("checkpoint tensor name too long: " + t.name);
        put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out += t.name;
        out.push_back(static_cast<char>(t.shape.size()));
        std::size_t n = 1;
        for (auto d : t.shape) {
            put_u32(out, static_cast<std::uint32_t>(d));
            n *= d;
        }
        if (n != t.data.size())
            throw ContractError("checkpoint tensor '" + t.name + "' shape/data mismatch");
        const std::size_t base = out.size();
        out.resize(base + n * 4);
        std::memcpy(out.data() + base, t.data.data(), n * 4);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to '" + path + "'");
}

std::vector<NamedTensor> load_daec(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();

    Reader r{buf, path};
    r.need(4, "magic");
    if (buf.compare(0, 4, "DAEC") != 0) r.fail("bad magic");
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32("tensor count");
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint16_t name_len = r.u16("name length");
        r.need(name_len, "name");
        t.name = buf.substr(r.pos, name_len);
        r.pos += name_len;
        const std::uint8_t rank = r.u8("rank");
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const std::uint32_t dim = r.u32("dimension");
            if (dim == 0) {
                r.pos -= 4;
                r.fail("zero dimension in tensor '" + t.name + "'");
            }
            t.shape.push_back(dim);
            n *= dim;
        }
        r.need(n * 4, "tensor payload");
        t.data.resize(n);
        std::memcpy(t.data.data(), buf.data() + r.pos, n * 4);
        r.pos += n * 4;
        tensors.push_back(std::move(t));
    }
    return tensors;
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors,
                               const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

} // namespace dae
