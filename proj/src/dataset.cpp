#include "emae/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "emae/errors.hpp"
#include "emae/rng.hpp"

namespace emae {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'A', 'E', 'D', 'S', '1', '\n'};

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

uint32_t get_u32(const std::string& buf, size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    }
    return v;
}

// Class palette: well-separated hues so raw pixels are linearly separable.
void class_color(int cls, uint8_t rgb[3]) {
    static const uint8_t base[8][3] = {
        {220, 60, 50},  {70, 200, 80},   {60, 90, 220},  {230, 210, 60},
        {200, 70, 200}, {70, 210, 210}, {240, 140, 50}, {150, 150, 150},
    };
    const uint8_t* b = base[cls % 8];
    rgb[0] = b[0];
    rgb[1] = b[1];
    rgb[2] = b[2];
}

uint8_t jitter_channel(uint8_t v, CounterRng& rng, int spread) {
    int d = static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * spread + 1))) - spread;
    int out = static_cast<int>(v) + d;
    return static_cast<uint8_t>(out < 0 ? 0 : (out > 255 ? 255 : out));
}

struct Canvas {
    int h, w, c;
    std::vector<uint8_t>& px;
    void set(int y, int x, const uint8_t rgb[3]) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        for (int ch = 0; ch < c; ++ch) {
            px[(static_cast<size_t>(y) * w + x) * c + ch] = rgb[ch % 3];
        }
    }
};

void draw_shape(Canvas& cv, int kind, int cy, int cx, int r, const uint8_t rgb[3]) {
    switch (kind % 4) {
        case 0:  // filled rectangle
            for (int y = cy - r; y <= cy + r; ++y)
                for (int x = cx - r; x <= cx + r; ++x) cv.set(y, x, rgb);
            break;
        case 1:  // filled circle
            for (int y = cy - r; y <= cy + r; ++y)
                for (int x = cx - r; x <= cx + r; ++x)
                    if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) cv.set(y, x, rgb);
            break;
        case 2:  // filled triangle, apex up
            for (int dy = -r; dy <= r; ++dy) {
                int half = ((dy + r) * r) / (2 * r > 0 ? 2 * r : 1);
                for (int dx = -half; dx <= half; ++dx) cv.set(cy + dy, cx + dx, rgb);
            }
            break;
        case 3:  // cross
            for (int d = -r; d <= r; ++d) {
                for (int t = -r / 3; t <= r / 3; ++t) {
                    cv.set(cy + d, cx + t, rgb);
                    cv.set(cy + t, cx + d, rgb);
                }
            }
            break;
    }
}

std::vector<uint8_t> render_shapes(const SynthSpec& spec, int cls, CounterRng& rng) {
    std::vector<uint8_t> px(static_cast<size_t>(spec.h) * spec.w * spec.c);
    uint8_t bg = static_cast<uint8_t>(20 + rng.next_below(30));
    for (uint8_t& v : px) v = jitter_channel(bg, rng, 8);

    uint8_t rgb[3];
    class_color(cls, rgb);
    for (int ch = 0; ch < 3; ++ch) rgb[ch] = jitter_channel(rgb[ch], rng, 25);

    const int margin = spec.h / 4;
    int cy = margin + static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.h - 2 * margin)));
    int cx = margin + static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.w - 2 * margin)));
    int r = spec.h / 5 + static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.h / 6 + 1)));

    Canvas cv{spec.h, spec.w, spec.c, px};
    // shape type follows the class so geometry and hue both carry the label
    draw_shape(cv, cls, cy, cx, r, rgb);
    return px;
}

std::vector<uint8_t> render_gradients(const SynthSpec& spec, int cls, CounterRng& rng) {
    std::vector<uint8_t> px(static_cast<size_t>(spec.h) * spec.w * spec.c);
    uint8_t lo[3], hi[3];
    class_color(cls, hi);
    for (int ch = 0; ch < 3; ++ch) {
        hi[ch] = jitter_channel(hi[ch], rng, 20);
        lo[ch] = static_cast<uint8_t>(hi[ch] / 4);
    }
    const int dir = cls % 4;  // gradient axis encodes the class too
    for (int y = 0; y < spec.h; ++y) {
        for (int x = 0; x < spec.w; ++x) {
            double t = 0;
            switch (dir) {
                case 0: t = static_cast<double>(x) / (spec.w - 1); break;
                case 1: t = static_cast<double>(y) / (spec.h - 1); break;
                case 2: t = static_cast<double>(x + y) / (spec.w + spec.h - 2); break;
                case 3: t = static_cast<double>(x + spec.h - 1 - y) / (spec.w + spec.h - 2); break;
            }
            for (int ch = 0; ch < spec.c; ++ch) {
                double v = lo[ch % 3] + t * (hi[ch % 3] - lo[ch % 3]);
                px[(static_cast<size_t>(y) * spec.w + x) * spec.c + ch] =
                    static_cast<uint8_t>(std::lround(v));
            }
        }
    }
    return px;
}

std::vector<uint8_t> render_textures(const SynthSpec& spec, int cls, CounterRng& rng) {
    std::vector<uint8_t> px(static_cast<size_t>(spec.h) * spec.w * spec.c);
    uint8_t fg[3];
    class_color(cls, fg);
    for (int ch = 0; ch < 3; ++ch) fg[ch] = jitter_channel(fg[ch], rng, 20);
    uint8_t bg[3] = {static_cast<uint8_t>(fg[0] / 5), static_cast<uint8_t>(fg[1] / 5),
                     static_cast<uint8_t>(fg[2] / 5)};
    const int period = 3 + static_cast<int>(rng.next_below(3));
    const int phase = static_cast<int>(rng.next_below(static_cast<uint64_t>(period)));
    for (int y = 0; y < spec.h; ++y) {
        for (int x = 0; x < spec.w; ++x) {
            bool on = false;
            switch (cls % 4) {
                case 0: on = ((x + phase) / period) % 2 == 0; break;  // vertical stripes
                case 1: on = ((y + phase) / period) % 2 == 0; break;  // horizontal stripes
                case 2:
                    on = (((x + phase) / period) + ((y + phase) / period)) % 2 == 0;  // checker
                    break;
                case 3:
                    on = ((x + phase) % (2 * period) < period) &&
                         ((y + phase) % (2 * period) < period);  // dots
                    break;
            }
            const uint8_t* src = on ? fg : bg;
            for (int ch = 0; ch < spec.c; ++ch) {
                px[(static_cast<size_t>(y) * spec.w + x) * spec.c + ch] = src[ch % 3];
            }
        }
    }
    return px;
}

}  // namespace

Values Dataset::image_unit(size_t i) const {
    const std::vector<uint8_t>& img = images.at(i);
    Values out(img.size());
    for (size_t q = 0; q < img.size(); ++q) out[q] = img[q] / 255.0;
    return out;
}

Dataset synth_dataset(const SynthSpec& spec) {
    if (spec.n_images <= 0 || spec.h <= 0 || spec.w <= 0 || spec.c <= 0) {
        throw ConfigError("synth spec dims must be positive");
    }
    if (spec.n_classes < 2) {
        throw ConfigError("synth spec needs at least 2 classes, got " +
                          std::to_string(spec.n_classes));
    }
    Dataset ds;
    ds.h = spec.h;
    ds.w = spec.w;
    ds.c = spec.c;
    ds.n_classes = spec.n_classes;
    ds.images.reserve(spec.n_images);
    ds.labels.reserve(spec.n_images);
    for (int i = 0; i < spec.n_images; ++i) {
        const int cls = i % spec.n_classes;
        CounterRng rng(CounterRng::derive(spec.seed, 0x696d67, static_cast<uint64_t>(i)));
        if (spec.kind == "shapes") {
            ds.images.push_back(render_shapes(spec, cls, rng));
        } else if (spec.kind == "gradients") {
            ds.images.push_back(render_gradients(spec, cls, rng));
        } else if (spec.kind == "textures") {
            ds.images.push_back(render_textures(spec, cls, rng));
        } else {
            throw ConfigError("unknown generator kind '" + spec.kind +
                              "' (expected shapes, gradients, textures)");
        }
        ds.labels.push_back(static_cast<uint32_t>(cls));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 8);
    put_u32(buf, static_cast<uint32_t>(ds.count()));
    put_u32(buf, static_cast<uint32_t>(ds.h));
    put_u32(buf, static_cast<uint32_t>(ds.w));
    put_u32(buf, static_cast<uint32_t>(ds.c));
    put_u32(buf, static_cast<uint32_t>(ds.n_classes));
    for (const auto& img : ds.images) {
        buf.append(reinterpret_cast<const char*>(img.data()), img.size());
    }
    for (uint32_t label : ds.labels) put_u32(buf, label);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write dataset " + path);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    os.flush();
    if (!os) throw IoError("write failed for dataset " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 28) {
        throw FormatError("dataset " + path + ": header needs 28 bytes, file has " +
                          std::to_string(buf.size()));
    }
    if (std::memcmp(buf.data(), kMagic, 8) != 0) {
        throw FormatError("dataset " + path + ": bad magic at offset 0");
    }
    Dataset ds;
    const uint32_t count = get_u32(buf, 8);
    ds.h = static_cast<int>(get_u32(buf, 12));
    ds.w = static_cast<int>(get_u32(buf, 16));
    ds.c = static_cast<int>(get_u32(buf, 20));
    ds.n_classes = static_cast<int>(get_u32(buf, 24));

    const size_t img_bytes = static_cast<size_t>(ds.h) * ds.w * ds.c;
    const size_t expect = 28 + static_cast<size_t>(count) * img_bytes + 4ull * count;
    if (buf.size() != expect) {
        throw FormatError("dataset " + path + ": expected " + std::to_string(expect) +
                          " bytes for " + std::to_string(count) + " images, file has " +
                          std::to_string(buf.size()));
    }

    size_t at = 28;
    ds.images.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        ds.images.emplace_back(buf.begin() + at, buf.begin() + at + img_bytes);
        at += img_bytes;
    }
    ds.labels.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t label = get_u32(buf, at);
        at += 4;
        if (label >= static_cast<uint32_t>(ds.n_classes)) {
            throw FormatError("dataset " + path + ": label " + std::to_string(label) +
                              " at offset " + std::to_string(at - 4) + " exceeds class count " +
                              std::to_string(ds.n_classes));
        }
        ds.labels.push_back(label);
    }
    return ds;
}

void generate_dataset(const SynthSpec& spec, const std::string& path) {
    save_dataset(synth_dataset(spec), path);
}

}  // namespace emae
