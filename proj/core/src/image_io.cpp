#include "iism/image_io.hpp"

#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <png.h>

namespace iism {

namespace {

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v & 0xff));
    out.push_back(std::uint8_t((v >> 8) & 0xff));
    out.push_back(std::uint8_t((v >> 16) & 0xff));
    out.push_back(std::uint8_t((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

} // namespace

std::vector<std::uint8_t> iism_bytes(const LabelMap& m, std::uint8_t class_count) {
    if (m.max_label() >= class_count)
        throw_error(ErrorKind::validation,
                    fmt::format("label {} exceeds declared class count {}", m.max_label(),
                                class_count));
    std::vector<std::uint8_t> out;
    out.reserve(14 + m.pixels());
    out.insert(out.end(), {'I', 'I', 'S', 'M'});
    out.push_back(kIismFormatVersion);
    put_u32le(out, std::uint32_t(m.height()));
    put_u32le(out, std::uint32_t(m.width()));
    out.push_back(class_count);
    out.insert(out.end(), m.data().begin(), m.data().end());
    return out;
}

IismFile parse_iism(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 14 || std::memcmp(bytes.data(), "IISM", 4) != 0)
        throw_error(ErrorKind::io, "not an IISM file");
    if (bytes[4] != kIismFormatVersion)
        throw_error(ErrorKind::version,
                    fmt::format("unsupported IISM version {}", bytes[4]));
    const std::uint32_t h = get_u32le(bytes.data() + 5);
    const std::uint32_t w = get_u32le(bytes.data() + 9);
    const std::uint8_t c = bytes[13];
    if (h == 0 || w == 0)
        throw_error(ErrorKind::io, "IISM file declares zero-sized map");
    if (bytes.size() != 14 + std::size_t(h) * w)
        throw_error(ErrorKind::io,
                    fmt::format("IISM payload size mismatch: expected {} pixels", h * w));
    std::vector<ClassId> data(bytes.begin() + 14, bytes.end());
    for (std::size_t p = 0; p < data.size(); ++p)
        if (data[p] >= c)
            throw_error(ErrorKind::io,
                        fmt::format("IISM pixel {} carries label {} >= class count {}", p,
                                    data[p], c));
    IismFile out{LabelMap(h, w, std::move(data)), c};
    return out;
}

void write_iism(const LabelMap& m, std::uint8_t class_count,
                const std::filesystem::path& path) {
    write_file_bytes(path, iism_bytes(m, class_count));
}

IismFile read_iism(const std::filesystem::path& path) {
    return parse_iism(read_file_bytes(path));
}

void write_label_png(const LabelMap& m, const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = png_uint_32(m.width());
    image.height = png_uint_32(m.height());
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, m.data().data(), 0, nullptr))
        throw_error(ErrorKind::io,
                    fmt::format("failed to write PNG {}: {}", path.string(), image.message));
}

LabelMap read_label_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw_error(ErrorKind::io,
                    fmt::format("failed to read PNG {}: {}", path.string(), image.message));
    image.format = PNG_FORMAT_GRAY;
    std::vector<ClassId> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
        throw_error(ErrorKind::io,
                    fmt::format("failed to decode PNG {}: {}", path.string(), image.message));
    return LabelMap(image.height, image.width, std::move(buffer));
}

LabelMap read_label_map(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".iism") return read_iism(path).map;
    if (ext == ".png") return read_label_png(path);
    throw_error(ErrorKind::io, fmt::format("unsupported label map extension '{}'", ext));
}

RgbImage render_rgb(const LabelMap& m, const ClassCatalog& catalog) {
    validate_labels(m, catalog);
    RgbImage img;
    img.height = m.height();
    img.width = m.width();
    img.pixels.resize(3 * m.pixels());
    for (std::size_t p = 0; p < m.pixels(); ++p) {
        const auto& color = catalog.entry(m.data()[p]).color;
        img.pixels[3 * p + 0] = color[0];
        img.pixels[3 * p + 1] = color[1];
        img.pixels[3 * p + 2] = color[2];
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = png_uint_32(image.width);
    png.height = png_uint_32(image.height);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
        throw_error(ErrorKind::io, fmt::format("PNG encode sizing failed: {}", png.message));
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
        throw_error(ErrorKind::io, fmt::format("PNG encode failed: {}", png.message));
    out.resize(size);
    return out;
}

RgbImage decode_png_rgb(const std::vector<std::uint8_t>& bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw_error(ErrorKind::io, fmt::format("PNG decode failed: {}", png.message));
    png.format = PNG_FORMAT_RGB;
    RgbImage img;
    img.height = png.height;
    img.width = png.width;
    img.pixels.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr))
        throw_error(ErrorKind::io, fmt::format("PNG decode failed: {}", png.message));
    return img;
}

std::vector<std::uint8_t> render_png(const LabelMap& m, const ClassCatalog& catalog) {
    return encode_png(render_rgb(m, catalog));
}

void render_png_file(const LabelMap& m, const ClassCatalog& catalog,
                     const std::filesystem::path& path) {
    write_file_bytes(path, render_png(m, catalog));
}

void write_png_file(const RgbImage& image, const std::filesystem::path& path) {
    write_file_bytes(path, encode_png(image));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw_error(ErrorKind::io, fmt::format("cannot open {}", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad())
        throw_error(ErrorKind::io, fmt::format("read failed for {}", path.string()));
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw_error(ErrorKind::io, fmt::format("cannot open {} for writing", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out)
        throw_error(ErrorKind::io, fmt::format("write failed for {}", path.string()));
}

} // namespace iism
