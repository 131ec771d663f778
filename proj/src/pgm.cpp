#include "n2b/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace n2b {

namespace {

// skips whitespace and '#' comment lines between header tokens
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            break;
        }
    }
    while ((c = is.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
    return tok;
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    if (next_token(is) != "P5") throw std::runtime_error(path.string() + " is not a binary PGM (P5)");
    const int w = std::stoi(next_token(is));
    const int h = std::stoi(next_token(is));
    const int maxval = std::stoi(next_token(is));
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
        throw std::runtime_error("unsupported PGM header in " + path.string());
    }
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw std::runtime_error("truncated PGM " + path.string());
    Tensor img({h, w});
    for (std::size_t i = 0; i < raw.size(); ++i) {
        img[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 2) {
        throw std::invalid_argument("write_pgm expects a 2-D image, got " +
                                    shape_string(image.shape()));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << "P5\n" << image.extent(1) << " " << image.extent(0) << "\n255\n";
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double v = std::clamp(image[i], 0.0, 1.0);
        os.put(static_cast<char>(std::lround(v * 255.0)));
    }
    if (!os) throw std::runtime_error("write failed on " + path.string());
}

}  // namespace n2b
