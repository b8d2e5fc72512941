#include "emae/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "emae/errors.hpp"

namespace emae {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'A', 'E', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
constexpr const char* kDimsEntry = "model.dims";

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

// Reader that tracks its offset so errors can name the failing byte.
struct Reader {
    std::ifstream in;
    std::string path;
    int64_t offset = 0;

    void read(void* dst, int64_t n, const char* what) {
        in.read(reinterpret_cast<char*>(dst), n);
        if (in.gcount() != n) {
            throw FormatError("checkpoint " + path + ": truncated reading " + what +
                              " at offset " + std::to_string(offset));
        }
        offset += n;
    }
    uint32_t u32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }
    uint64_t u64(const char* what) {
        unsigned char b[8];
        read(b, 8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

void put_entry(std::ostream& os, const std::string& name, const Shape& shape,
               const Values& payload) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_u32(os, static_cast<uint32_t>(d));
    for (double v : payload) put_f64(os, v);
}

struct Entry {
    std::string name;
    Shape shape;
    Values payload;
};

Entry read_entry(Reader& r) {
    Entry e;
    uint32_t name_len = r.u32("entry name length");
    if (name_len > 4096) {
        throw FormatError("checkpoint " + r.path + ": implausible name length " +
                          std::to_string(name_len) + " at offset " +
                          std::to_string(r.offset - 4));
    }
    e.name.resize(name_len);
    r.read(e.name.data(), name_len, "entry name");
    uint32_t rank = r.u32("entry rank");
    if (rank > 8) {
        throw FormatError("checkpoint " + r.path + ": implausible rank " +
                          std::to_string(rank) + " for '" + e.name + "'");
    }
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = r.u32("entry dim");
        e.shape.push_back(static_cast<int>(d));
        numel *= d;
    }
    e.payload.resize(numel);
    for (int64_t i = 0; i < numel; ++i) e.payload[i] = r.f64("entry payload");
    return e;
}

Values config_dims(const ModelConfig& c) {
    return {static_cast<double>(c.img_h),      static_cast<double>(c.img_w),
            static_cast<double>(c.channels),   static_cast<double>(c.patch),
            static_cast<double>(c.d_enc),      static_cast<double>(c.enc_blocks),
            static_cast<double>(c.enc_heads),  static_cast<double>(c.d_dec),
            static_cast<double>(c.dec_blocks), static_cast<double>(c.dec_heads)};
}

ModelConfig dims_to_config(const Values& v, const std::string& path) {
    if (v.size() != 10) {
        throw FormatError("checkpoint " + path + ": model.dims entry has " +
                          std::to_string(v.size()) + " values, expected 10");
    }
    ModelConfig c;
    c.img_h = static_cast<int>(v[0]);
    c.img_w = static_cast<int>(v[1]);
    c.channels = static_cast<int>(v[2]);
    c.patch = static_cast<int>(v[3]);
    c.d_enc = static_cast<int>(v[4]);
    c.enc_blocks = static_cast<int>(v[5]);
    c.enc_heads = static_cast<int>(v[6]);
    c.d_dec = static_cast<int>(v[7]);
    c.dec_blocks = static_cast<int>(v[8]);
    c.dec_heads = static_cast<int>(v[9]);
    return c;
}

void open_and_check_header(Reader& r) {
    r.in.open(r.path, std::ios::binary);
    if (!r.in) throw IoError("cannot open checkpoint " + r.path);
    char magic[8];
    r.read(magic, 8, "magic");
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError("checkpoint " + r.path + ": bad magic at offset 0");
    }
    uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError("checkpoint " + r.path + ": unsupported version " +
                          std::to_string(version));
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const AdamW& optim,
                     int64_t step, uint64_t config_hash) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path);
    os.write(kMagic, 8);
    put_u32(os, kVersion);

    const auto& params = model.params();
    put_u32(os, static_cast<uint32_t>(params.size()));
    for (const NamedParam& prm : params) put_entry(os, prm.name, prm.shape, *prm.data);

    const auto& m = optim.first_moments();
    const auto& v = optim.second_moments();
    put_u32(os, static_cast<uint32_t>(2 * params.size() + 1));
    for (size_t i = 0; i < params.size(); ++i) {
        put_entry(os, "m." + params[i].name, params[i].shape, m[i]);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        put_entry(os, "v." + params[i].name, params[i].shape, v[i]);
    }
    Values dims = config_dims(model.config());
    put_entry(os, kDimsEntry, {static_cast<int>(dims.size())}, dims);

    put_u64(os, static_cast<uint64_t>(step));
    put_u64(os, config_hash);
    os.flush();
    if (!os) throw IoError("write failed for checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, Model& model, AdamW& optim) {
    Reader r;
    r.path = path;
    open_and_check_header(r);

    const auto& params = model.params();
    uint32_t n_params = r.u32("parameter count");
    if (n_params != params.size()) {
        throw IncompatibleCheckpoint("checkpoint " + path + " holds " +
                                     std::to_string(n_params) + " parameters, model has " +
                                     std::to_string(params.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Entry e = read_entry(r);
        if (e.name != params[i].name || e.shape != params[i].shape) {
            throw IncompatibleCheckpoint("checkpoint " + path + " entry '" + e.name + "' " +
                                         shape_str(e.shape) + " does not match parameter '" +
                                         params[i].name + "' " + shape_str(params[i].shape));
        }
        *params[i].data = std::move(e.payload);
    }

    uint32_t n_state = r.u32("optimizer entry count");
    if (n_state != 2 * params.size() + 1) {
        throw IncompatibleCheckpoint("checkpoint " + path + " optimizer table has " +
                                     std::to_string(n_state) + " entries, expected " +
                                     std::to_string(2 * params.size() + 1));
    }
    LoadedCheckpoint out;
    for (size_t i = 0; i < params.size(); ++i) {
        Entry e = read_entry(r);
        if (e.name != "m." + params[i].name) {
            throw IncompatibleCheckpoint("checkpoint " + path + ": unexpected state entry '" +
                                         e.name + "'");
        }
        optim.first_moments()[i] = std::move(e.payload);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Entry e = read_entry(r);
        if (e.name != "v." + params[i].name) {
            throw IncompatibleCheckpoint("checkpoint " + path + ": unexpected state entry '" +
                                         e.name + "'");
        }
        optim.second_moments()[i] = std::move(e.payload);
    }
    Entry dims = read_entry(r);
    if (dims.name != kDimsEntry) {
        throw IncompatibleCheckpoint("checkpoint " + path + ": missing model.dims entry");
    }
    out.config = dims_to_config(dims.payload, path);
    if (!(out.config == model.config())) {
        throw IncompatibleCheckpoint("checkpoint " + path +
                                     " was written for a different architecture");
    }

    out.step = static_cast<int64_t>(r.u64("step footer"));
    out.config_hash = r.u64("config hash footer");
    optim.set_step_count(out.step);
    return out;
}

ModelConfig peek_checkpoint_config(const std::string& path) {
    Reader r;
    r.path = path;
    open_and_check_header(r);
    uint32_t n_params = r.u32("parameter count");
    for (uint32_t i = 0; i < n_params; ++i) read_entry(r);
    uint32_t n_state = r.u32("optimizer entry count");
    for (uint32_t i = 0; i < n_state; ++i) {
        Entry e = read_entry(r);
        if (e.name == kDimsEntry) return dims_to_config(e.payload, path);
    }
    throw FormatError("checkpoint " + path + ": no model.dims entry found");
}

}  // namespace emae
