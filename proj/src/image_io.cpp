#include "indeed/image_io.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <cstdio>
#include <fstream>

namespace indeed {

namespace {

std::string lower_ext(const std::filesystem::path& path) {
    std::string e = path.extension().string();
    for (char& c : e) c = static_cast<char>(std::tolower(c));
    return e;
}

int read_pnm_token(std::istream& in) {
    // skips whitespace and '#' comments
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw FileFormatError("pnm: malformed header");
    return v;
}

ImageTensor read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileFormatError("read_image: cannot open " + path.string());
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw FileFormatError("pnm: expected binary P5/P6 in " + path.string());
    const int channels = magic[1] == '5' ? 1 : 3;
    const int w = read_pnm_token(in);
    const int h = read_pnm_token(in);
    const int maxval = read_pnm_token(in);
    if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535))
        throw FileFormatError("pnm: unsupported header in " + path.string());
    in.get(); // single whitespace after maxval

    const int bytes = maxval == 255 ? 1 : 2;
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * channels * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw FileFormatError("pnm: truncated pixel data in " + path.string());

    ImageTensor img;
    for (int c = 0; c < channels; ++c) img.channels.emplace_back(h, w);
    size_t p = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < channels; ++c) {
                unsigned v;
                if (bytes == 1) {
                    v = buf[p++];
                } else {
                    v = static_cast<unsigned>(buf[p] << 8 | buf[p + 1]); // big-endian
                    p += 2;
                }
                img.ch(c)(i, j) = static_cast<double>(v) / maxval;
            }
    return img;
}

void write_pnm(const ImageTensor& img, const std::filesystem::path& path, int bit_depth) {
    const int channels = img.num_channels();
    if (channels != 1 && channels != 3)
        throw FileFormatError("write_image: pnm supports 1 or 3 channels");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileFormatError("write_image: cannot open " + path.string());
    const int maxval = bit_depth == 8 ? 255 : 65535;
    out << (channels == 1 ? "P5" : "P6") << '\n'
        << img.width() << ' ' << img.height() << '\n'
        << maxval << '\n';
    for (Eigen::Index i = 0; i < img.height(); ++i)
        for (Eigen::Index j = 0; j < img.width(); ++j)
            for (int c = 0; c < channels; ++c) {
                const double x = std::clamp(img.ch(c)(i, j), 0.0, 1.0);
                const unsigned v = static_cast<unsigned>(std::lround(x * maxval));
                if (bit_depth == 8) {
                    out.put(static_cast<char>(v));
                } else {
                    out.put(static_cast<char>(v >> 8));
                    out.put(static_cast<char>(v & 0xff));
                }
            }
    if (!out) throw FileFormatError("write_image: write failure on " + path.string());
}

struct PngCloser {
    std::FILE* f = nullptr;
    ~PngCloser() {
        if (f) std::fclose(f);
    }
};

ImageTensor read_png(const std::filesystem::path& path) {
    PngCloser fc;
    fc.f = std::fopen(path.string().c_str(), "rb");
    if (!fc.f) throw FileFormatError("read_image: cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FileFormatError("read_image: corrupt png " + path.string());
    }
    png_init_io(png, fc.f);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    color = png_get_color_type(png, info);
    const int channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const double maxval = depth == 16 ? 65535.0 : 255.0;

    std::vector<png_byte> row(png_get_rowbytes(png, info));
    ImageTensor img;
    for (int c = 0; c < channels; ++c)
        img.channels.emplace_back(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
    for (png_uint_32 i = 0; i < h; ++i) {
        png_read_row(png, row.data(), nullptr);
        size_t p = 0;
        for (png_uint_32 j = 0; j < w; ++j)
            for (int c = 0; c < channels; ++c) {
                unsigned v;
                if (depth == 16) {
                    v = static_cast<unsigned>(row[p] << 8 | row[p + 1]);
                    p += 2;
                } else {
                    v = row[p++];
                }
                img.ch(c)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    static_cast<double>(v) / maxval;
            }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const ImageTensor& img, const std::filesystem::path& path, int bit_depth) {
    const int channels = img.num_channels();
    if (channels != 1 && channels != 3)
        throw FileFormatError("write_image: png supports 1 or 3 channels");
    PngCloser fc;
    fc.f = std::fopen(path.string().c_str(), "wb");
    if (!fc.f) throw FileFormatError("write_image: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FileFormatError("write_image: png failure on " + path.string());
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
                 static_cast<png_uint_32>(img.height()), bit_depth,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const unsigned maxval = bit_depth == 8 ? 255u : 65535u;
    std::vector<png_byte> row(static_cast<size_t>(img.width()) * channels * (bit_depth / 8));
    for (Eigen::Index i = 0; i < img.height(); ++i) {
        size_t p = 0;
        for (Eigen::Index j = 0; j < img.width(); ++j)
            for (int c = 0; c < channels; ++c) {
                const double x = std::clamp(img.ch(c)(i, j), 0.0, 1.0);
                const unsigned v = static_cast<unsigned>(std::lround(x * maxval));
                if (bit_depth == 16) {
                    row[p++] = static_cast<png_byte>(v >> 8);
                    row[p++] = static_cast<png_byte>(v & 0xff);
                } else {
                    row[p++] = static_cast<png_byte>(v);
                }
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

ImageTensor read_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".pgm" || ext == ".ppm") return read_pnm(path);
    throw FileFormatError("read_image: unsupported extension " + ext);
}

void write_image(const ImageTensor& img, const std::filesystem::path& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16)
        throw FileFormatError("write_image: bit depth must be 8 or 16");
    const std::string ext = lower_ext(path);
    if (ext == ".png") return write_png(img, path, bit_depth);
    if (ext == ".pgm" || ext == ".ppm") return write_pnm(img, path, bit_depth);
    throw FileFormatError("write_image: unsupported extension " + ext);
}

void write_component_image(const Matrix& component, const std::filesystem::path& path) {
    double lo = component.minCoeff(), hi = component.maxCoeff();
    if (hi - lo < 1e-300) hi = lo + 1.0;
    ImageTensor img(((component.array() - lo) / (hi - lo)).matrix());
    write_image(img, path, 16);
    nlohmann::json sidecar{{"lo", lo}, {"hi", hi}};
    std::ofstream out(path.string() + ".range.json", std::ios::trunc);
    out << sidecar.dump(2) << '\n';
}

Matrix read_component_image(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".range.json");
    if (!in) throw FileFormatError("read_component_image: missing sidecar for " + path.string());
    nlohmann::json sidecar;
    in >> sidecar;
    const double lo = sidecar.at("lo").get<double>();
    const double hi = sidecar.at("hi").get<double>();
    ImageTensor img = read_image(path);
    return (img.ch(0).array() * (hi - lo) + lo).matrix();
}

void write_array_f64(const Matrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileFormatError("write_array_f64: cannot open " + path.string());
    out.write("INDEEDF8", 8);
    const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
    const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    // row-major on disk
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    if (!out) throw FileFormatError("write_array_f64: write failure on " + path.string());
}

Matrix read_array_f64(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileFormatError("read_array_f64: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "INDEEDF8", 8) != 0)
        throw FileFormatError("read_array_f64: bad magic in " + path.string());
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    if (!in || rows == 0 || cols == 0 || rows * cols > (1ull << 32))
        throw FileFormatError("read_array_f64: bad shape in " + path.string());
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::uint64_t i = 0; i < rows; ++i)
        for (std::uint64_t j = 0; j < cols; ++j) {
            double v;
            in.read(reinterpret_cast<char*>(&v), 8);
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    if (!in) throw FileFormatError("read_array_f64: truncated " + path.string());
    return m;
}

} // namespace indeed
