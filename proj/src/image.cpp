#include "covis/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace covis {

Image Image::blank(std::int64_t w, std::int64_t h) {
    Image im;
    im.w = w;
    im.h = h;
    im.pix.assign(static_cast<std::size_t>(w * h), 0.0);
    return im;
}

RgbImage RgbImage::blank(std::int64_t w, std::int64_t h) {
    RgbImage im;
    im.w = w;
    im.h = h;
    im.data.assign(static_cast<std::size_t>(3 * w * h), 0);
    return im;
}

void RgbImage::set(std::int64_t y, std::int64_t x, std::uint8_t r, std::uint8_t g,
                   std::uint8_t b) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    std::size_t i = static_cast<std::size_t>(3 * (y * w + x));
    data[i] = r;
    data[i + 1] = g;
    data[i + 2] = b;
}

namespace {

struct PnmHeader {
    std::string magic;
    std::int64_t w = 0, h = 0, maxval = 0;
    std::vector<std::string> comments;
    std::size_t data_offset = 0;
};

std::string read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// netpbm header: magic, then whitespace-separated tokens with '#' comments
PnmHeader parse_header(const std::string& buf, const std::string& path) {
    PnmHeader hd;
    std::size_t i = 0;
    auto skip_ws = [&]() {
        while (i < buf.size()) {
            if (buf[i] == '#') {
                std::size_t e = buf.find('\n', i);
                if (e == std::string::npos) e = buf.size();
                hd.comments.push_back(buf.substr(i + 1, e - i - 1));
                i = e;
            } else if (std::isspace(static_cast<unsigned char>(buf[i]))) {
                ++i;
            } else {
                break;
            }
        }
    };
    auto token = [&]() {
        skip_ws();
        std::size_t s = i;
        while (i < buf.size() && !std::isspace(static_cast<unsigned char>(buf[i])) &&
               buf[i] != '#')
            ++i;
        if (s == i) throw error("truncated header in " + path);
        return buf.substr(s, i - s);
    };
    hd.magic = token();
    auto num = [&](const char* what) {
        std::string t = token();
        try {
            return static_cast<std::int64_t>(std::stoll(t));
        } catch (...) {
            throw error(std::string("bad ") + what + " '" + t + "' in " + path);
        }
    };
    hd.w = num("width");
    hd.h = num("height");
    hd.maxval = num("maxval");
    if (hd.w <= 0 || hd.h <= 0) throw error("bad dimensions in " + path);
    if (i >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[i])))
        throw error("missing separator after maxval in " + path);
    hd.data_offset = i + 1;  // exactly one whitespace byte before the raster
    return hd;
}

}  // namespace

Image load_image(const std::string& path) {
    std::string buf = read_all(path);
    PnmHeader hd = parse_header(buf, path);
    if (hd.magic != "P5" && hd.magic != "P6")
        throw error("unsupported format '" + hd.magic + "' in " + path + " (need binary P5/P6)");
    if (hd.maxval != 255)
        throw error("unsupported maxval " + std::to_string(hd.maxval) + " in " + path +
                    " (need 255)");
    int ch = hd.magic == "P6" ? 3 : 1;
    std::size_t need = static_cast<std::size_t>(hd.w * hd.h * ch);
    if (buf.size() - hd.data_offset < need) throw error("truncated pixel data in " + path);
    Image im = Image::blank(hd.w, hd.h);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(buf.data()) + hd.data_offset;
    for (std::int64_t k = 0; k < hd.w * hd.h; ++k) {
        if (ch == 1) {
            im.pix[static_cast<std::size_t>(k)] = p[k] / 255.0;
        } else {
            double s = p[3 * k] + p[3 * k + 1] + p[3 * k + 2];
            im.pix[static_cast<std::size_t>(k)] = s / (3.0 * 255.0);
        }
    }
    return im;
}

void save_pgm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw error("cannot write " + path);
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    for (double v : img.pix) {
        double c = std::min(std::max(v, 0.0), 1.0);
        f.put(static_cast<char>(static_cast<int>(std::lround(c * 255.0))));
    }
    if (!f) throw error("write failed for " + path);
}

void save_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw error("cannot write " + path);
    f << "P6\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (!f) throw error("write failed for " + path);
}

DepthMap load_depth(const std::string& path) {
    std::string buf = read_all(path);
    PnmHeader hd = parse_header(buf, path);
    if (hd.magic != "P5") throw error("depth map must be P5, got '" + hd.magic + "' in " + path);
    if (hd.maxval != 65535)
        throw error("depth map must be 16-bit (maxval 65535) in " + path);
    std::int64_t scale = 0;
    for (const auto& c : hd.comments) {
        std::istringstream ss(c);
        std::string key;
        std::int64_t v;
        if (ss >> key >> v && key == "depth-scale") scale = v;
    }
    if (scale <= 0) throw error("missing '# depth-scale N' comment in " + path);
    std::size_t need = static_cast<std::size_t>(hd.w * hd.h * 2);
    if (buf.size() - hd.data_offset < need) throw error("truncated depth data in " + path);
    DepthMap d;
    d.w = hd.w;
    d.h = hd.h;
    d.depth.resize(static_cast<std::size_t>(hd.w * hd.h));
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(buf.data()) + hd.data_offset;
    for (std::size_t k = 0; k < d.depth.size(); ++k) {
        std::uint32_t raw = (static_cast<std::uint32_t>(p[2 * k]) << 8) | p[2 * k + 1];
        d.depth[k] = static_cast<double>(raw) / static_cast<double>(scale);
    }
    return d;
}

void save_depth(const std::string& path, const DepthMap& d, std::int64_t scale) {
    if (scale <= 0) throw error("depth scale must be positive");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw error("cannot write " + path);
    f << "P5\n# depth-scale " << scale << "\n" << d.w << " " << d.h << "\n65535\n";
    for (double v : d.depth) {
        double raw = std::lround(v * static_cast<double>(scale));
        raw = std::min(std::max(raw, 0.0), 65535.0);
        std::uint32_t r = static_cast<std::uint32_t>(raw);
        f.put(static_cast<char>((r >> 8) & 0xff));
        f.put(static_cast<char>(r & 0xff));
    }
    if (!f) throw error("write failed for " + path);
}

void save_matches(const std::string& path, const MatchFile& mf) {
    std::ofstream f(path);
    if (!f) throw error("cannot write " + path);
    f << "dims " << mf.w << " " << mf.h << "\n";
    char line[160];
    for (const auto& m : mf.matches) {
        std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %.6f %.6f\n", m.x1, m.y1, m.x2, m.y2,
                      m.conf);
        f << line;
    }
    if (!f) throw error("write failed for " + path);
}

MatchFile load_matches(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw error("cannot open " + path);
    MatchFile mf;
    std::string tag;
    if (!(f >> tag >> mf.w >> mf.h) || tag != "dims")
        throw error("bad match file header in " + path);
    Match m;
    while (f >> m.x1 >> m.y1 >> m.x2 >> m.y2 >> m.conf) mf.matches.push_back(m);
    return mf;
}

}  // namespace covis
