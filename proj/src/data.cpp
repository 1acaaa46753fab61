#include "attreid/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <png.h>

namespace attreid {

namespace fs = std::filesystem;

std::string platform_name(Platform p) { return p == Platform::aerial ? "aerial" : "ground"; }

Platform parse_platform(const std::string& s) {
    if (s == "aerial") return Platform::aerial;
    if (s == "ground") return Platform::ground;
    throw ParseError("unknown platform: " + s);
}

void DatasetManifest::validate() const {
    std::map<int, Platform> camera_platform;
    for (const auto& r : records) {
        if (attribute_table.find(r.person_id) == attribute_table.end())
            throw MissingAttributes("person_id " + std::to_string(r.person_id) +
                                    " has no attribute row");
        auto [it, inserted] = camera_platform.emplace(r.camera_id, r.platform);
        if (!inserted && it->second != r.platform)
            throw ParseError("camera " + std::to_string(r.camera_id) +
                             " appears on both platforms");
    }
}

void SyntheticSpec::validate() const {
    if (id_count < 2) throw InvalidParam("synthetic id_count must be >= 2");
    if (height < 32 || width < 16) throw InvalidParam("synthetic image size must be >= 32x16");
    if (images_per_id_per_platform < 1)
        throw InvalidParam("images_per_id_per_platform must be >= 1");
    if (!(noise_level >= 0.0 && noise_level < 1.0))
        throw InvalidParam("noise_level must be in [0,1)");
    if (aerial_downscale < 1) throw InvalidParam("aerial_downscale must be >= 1");
    if (!(aerial_squash > 0.0 && aerial_squash <= 1.0))
        throw InvalidParam("aerial_squash must be in (0,1]");
}

namespace {

struct Rgb {
    double r, g, b;
};

// Fixed palette used for every color-valued attribute.
constexpr Rgb kPalette[10] = {
    {0.85, 0.10, 0.10}, {0.10, 0.65, 0.15}, {0.15, 0.20, 0.85}, {0.90, 0.80, 0.10},
    {0.80, 0.15, 0.80}, {0.10, 0.75, 0.80}, {0.95, 0.55, 0.10}, {0.30, 0.30, 0.30},
    {0.92, 0.92, 0.92}, {0.55, 0.35, 0.15},
};

// Positional attribute roles; the default schema's order matches.
enum Role {
    kGender = 0,
    kAge,
    kHeight,
    kBuild,
    kHairColor,
    kHairStyle,
    kUpperColor,
    kUpperType,
    kLowerColor,
    kLowerType,
    kShoeColor,
    kShoeType,
    kBagType,
    kHeadwear,
    kAccessory,
    kRoleCount
};

struct RawView {
    const std::vector<std::size_t>& raw;
    const AttributeSchema& schema;

    // Category of the attribute filling role r, 0 when the schema is
    // shorter than the role list.
    std::size_t cat(Role r) const { return r < raw.size() ? raw[r] : 0; }
    double frac(Role r) const {
        if (static_cast<std::size_t>(r) >= raw.size()) return 0.0;
        const std::size_t n = schema.attribute(r).cardinality;
        return n > 1 ? static_cast<double>(raw[r]) / static_cast<double>(n - 1) : 0.0;
    }
};

struct BodyLayout {
    std::size_t body_top, hat_end, head_end, torso_end, legs_end, body_bottom;
    std::size_t col_begin, col_end;
};

BodyLayout compute_layout(const SyntheticSpec& spec, const RawView& a, int dx, int dy) {
    const auto H = static_cast<std::ptrdiff_t>(spec.height);
    const auto W = static_cast<std::ptrdiff_t>(spec.width);
    const double body_h = (0.80 + 0.15 * a.frac(kHeight)) * static_cast<double>(H);
    const double body_w = (0.45 + 0.30 * a.frac(kBuild)) * static_cast<double>(W);
    BodyLayout L;
    const std::ptrdiff_t top = std::clamp<std::ptrdiff_t>(dy, 0, H - 1);
    auto row = [&](double f) {
        return static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(top + static_cast<std::ptrdiff_t>(f * body_h), 0, H));
    };
    L.body_top = static_cast<std::size_t>(top);
    L.hat_end = row(0.08);
    L.head_end = row(0.23);
    L.torso_end = row(0.55);
    L.legs_end = row(0.87);
    L.body_bottom = row(1.0);
    const std::ptrdiff_t cx = W / 2 + dx;
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(body_w / 2.0);
    L.col_begin = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(cx - half, 0, W));
    L.col_end = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(cx + half, 0, W));
    return L;
}

void paint(Tensor& img, std::size_t y, std::size_t x, const Rgb& c) {
    img.at(0, y, x) = c.r;
    img.at(1, y, x) = c.g;
    img.at(2, y, x) = c.b;
}

Rgb darken(const Rgb& c, double f) { return {c.r * f, c.g * f, c.b * f}; }

void aerial_transform(Tensor& img, const SyntheticSpec& spec, const Rgb& bg) {
    const std::size_t H = spec.height, W = spec.width;
    // vertical squash: content compressed toward the top
    if (spec.aerial_squash < 1.0) {
        Tensor src = img;
        const auto limit = static_cast<std::size_t>(spec.aerial_squash * static_cast<double>(H));
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                if (y < limit) {
                    const auto sy = std::min<std::size_t>(
                        H - 1, static_cast<std::size_t>(static_cast<double>(y) / spec.aerial_squash));
                    for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = src.at(c, sy, x);
                } else {
                    paint(img, y, x, bg);
                }
            }
    }
    // resolution loss: average-pool then nearest upsample
    if (spec.aerial_downscale > 1) {
        const std::size_t f = spec.aerial_downscale;
        Tensor src = img;
        for (std::size_t by = 0; by < H; by += f)
            for (std::size_t bx = 0; bx < W; bx += f) {
                const std::size_t ey = std::min(H, by + f), ex = std::min(W, bx + f);
                for (std::size_t c = 0; c < 3; ++c) {
                    double s = 0.0;
                    for (std::size_t y = by; y < ey; ++y)
                        for (std::size_t x = bx; x < ex; ++x) s += src.at(c, y, x);
                    s /= static_cast<double>((ey - by) * (ex - bx));
                    for (std::size_t y = by; y < ey; ++y)
                        for (std::size_t x = bx; x < ex; ++x) img.at(c, y, x) = s;
                }
            }
    }
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = std::clamp(img[i] + spec.aerial_brightness, 0.0, 1.0);
}

}  // namespace

Tensor render_person(const SyntheticSpec& spec, const AttributeSchema& schema,
                     const std::vector<std::size_t>& raw_attributes, Platform platform,
                     std::uint64_t image_seed) {
    spec.validate();
    if (raw_attributes.size() != schema.attribute_count())
        throw SchemaMismatch("render_person: raw attribute count does not match schema");
    encode(schema, raw_attributes);  // range check
    const RawView a{raw_attributes, schema};
    const std::size_t H = spec.height, W = spec.width;

    std::mt19937_64 rng(image_seed);
    const int dx = static_cast<int>(rng() % 5) - 2;
    const int dy = static_cast<int>(rng() % 3);
    const BodyLayout L = compute_layout(spec, a, dx, dy);

    const double bg_level = 0.28 + 0.08 * a.frac(kAge);
    const Rgb bg{bg_level, bg_level, bg_level};
    Tensor img({3, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) paint(img, y, x, bg);

    const Rgb hair = kPalette[a.cat(kHairColor) % 10];
    const Rgb upper = kPalette[a.cat(kUpperColor) % 10];
    const Rgb lower = kPalette[a.cat(kLowerColor) % 10];
    const Rgb shoe = kPalette[a.cat(kShoeColor) % 10];
    const std::size_t upper_period = a.cat(kUpperType) > 0 ? a.cat(kUpperType) + 1 : 0;
    const std::size_t lower_period = a.cat(kLowerType) > 0 ? a.cat(kLowerType) + 1 : 0;

    // head coverage narrows with hair style
    const std::size_t body_w = L.col_end - L.col_begin;
    const std::size_t head_margin =
        static_cast<std::size_t>((0.25 * (1.0 - a.frac(kHairStyle))) * static_cast<double>(body_w));
    // shoe band shrinks with shoe type
    const std::size_t shoe_top =
        L.legs_end + static_cast<std::size_t>(a.frac(kShoeType) *
                                              0.5 * static_cast<double>(L.body_bottom - L.legs_end));

    for (std::size_t y = L.body_top; y < L.body_bottom && y < H; ++y)
        for (std::size_t x = L.col_begin; x < L.col_end; ++x) {
            if (y < L.hat_end) {
                if (a.cat(kHeadwear) > 0) paint(img, y, x, kPalette[(a.cat(kHeadwear) + 2) % 10]);
            } else if (y < L.head_end) {
                if (x >= L.col_begin + head_margin && x + head_margin < L.col_end)
                    paint(img, y, x, hair);
            } else if (y < L.torso_end) {
                Rgb c = upper;
                if (upper_period && ((y / 2) % upper_period) == 0) c = darken(c, 0.55);
                paint(img, y, x, c);
            } else if (y < L.legs_end) {
                Rgb c = lower;
                if (lower_period && ((y / 2) % lower_period) == 0) c = darken(c, 0.55);
                paint(img, y, x, c);
            } else if (y >= shoe_top) {
                paint(img, y, x, shoe);
            }
        }

    // belt: accessory-coloured rows at the torso/legs boundary
    if (a.cat(kAccessory) > 0 && L.torso_end >= L.head_end + 2)
        for (std::size_t y = L.torso_end - 2; y < L.torso_end; ++y)
            for (std::size_t x = L.col_begin; x < L.col_end; ++x)
                paint(img, y, x, kPalette[(a.cat(kAccessory) + 4) % 10]);

    // bag: stripe along the body's left edge over torso and legs
    if (a.cat(kBagType) > 0)
        for (std::size_t y = L.head_end; y < L.legs_end; ++y)
            for (std::size_t x = L.col_begin; x < std::min(L.col_begin + 2, L.col_end); ++x)
                paint(img, y, x, kPalette[(a.cat(kBagType) + 6) % 10]);

    // gender: body outline brightness
    {
        const double level = a.cat(kGender) == 0 ? 0.08 : 0.95;
        const Rgb outline{level, level, level};
        for (std::size_t y = L.head_end; y < L.body_bottom && y < H; ++y) {
            if (L.col_begin < W) paint(img, y, L.col_begin, outline);
            if (L.col_end > 0 && L.col_end - 1 < W) paint(img, y, L.col_end - 1, outline);
        }
    }

    if (platform == Platform::aerial) aerial_transform(img, spec, bg);

    if (spec.noise_level > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_level);
        for (std::size_t i = 0; i < img.size(); ++i)
            img[i] = std::clamp(img[i] + noise(rng), 0.0, 1.0);
    }
    return img;
}

Dataset generate_synthetic(const SyntheticSpec& spec, const AttributeSchema& schema) {
    spec.validate();
    Dataset ds;
    for (std::size_t id = 0; id < spec.id_count; ++id) {
        std::mt19937_64 rng(derive_seed(spec.seed, 0x1000 + id));
        std::vector<std::size_t> raw;
        raw.reserve(schema.attribute_count());
        for (const auto& attr : schema.attributes())
            raw.push_back(rng() % attr.cardinality);
        ds.manifest.attribute_table[static_cast<int>(id)] = raw;
        ds.manifest.original_person_ids.push_back(static_cast<int>(id));
        for (Platform platform : {Platform::aerial, Platform::ground}) {
            for (std::size_t j = 0; j < spec.images_per_id_per_platform; ++j) {
                const std::uint64_t image_seed = derive_seed(
                    spec.seed, (platform == Platform::aerial ? 0x20000000ULL : 0x40000000ULL) + j);
                char name[64];
                std::snprintf(name, sizeof name, "images/id%03zu_%s_%02zu.atrt", id,
                              platform_name(platform).c_str(), j);
                ds.manifest.records.push_back({name, static_cast<int>(id), platform,
                                               platform == Platform::aerial ? 0 : 1,
                                               static_cast<int>(j)});
                ds.images.push_back(render_person(spec, schema, raw, platform, image_seed));
            }
        }
    }
    ds.manifest.validate();
    return ds;
}

DatasetManifest load_manifest(const std::string& manifest_path,
                              const std::string& attribute_table_path,
                              const AttributeSchema& schema) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("manifest is empty: " + manifest_path);

    struct RawRecord {
        std::string path;
        int person_id, camera_id, frame_index;
        Platform platform;
    };
    std::vector<RawRecord> raw_records;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string path, pid, plat, cam, frame;
        if (!std::getline(ss, path, ',') || !std::getline(ss, pid, ',') ||
            !std::getline(ss, plat, ',') || !std::getline(ss, cam, ',') ||
            !std::getline(ss, frame, ','))
            throw ParseError("manifest line " + std::to_string(lineno) + ": expected 5 fields");
        try {
            raw_records.push_back(
                {path, std::stoi(pid), std::stoi(cam), std::stoi(frame), parse_platform(plat)});
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": bad integer field");
        }
    }
    if (raw_records.empty()) throw ParseError("manifest has no records: " + manifest_path);

    AttributeTable table = load_attribute_table(attribute_table_path, schema);

    // dense re-index by ascending original id
    std::vector<int> ids;
    for (const auto& r : raw_records) ids.push_back(r.person_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::map<int, int> dense;
    for (std::size_t i = 0; i < ids.size(); ++i) dense[ids[i]] = static_cast<int>(i);

    std::string missing;
    for (int id : ids)
        if (table.find(id) == table.end()) missing += (missing.empty() ? "" : ", ") + std::to_string(id);
    if (!missing.empty())
        throw MissingAttributes("person_ids without attribute rows: " + missing);

    DatasetManifest manifest;
    manifest.original_person_ids = ids;
    for (const auto& r : raw_records)
        manifest.records.push_back({r.path, dense[r.person_id], r.platform, r.camera_id, r.frame_index});
    for (int id : ids) manifest.attribute_table[dense[id]] = table[id];
    manifest.validate();
    return manifest;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << "image_path,person_id,platform,camera_id,frame_index\n";
    for (const auto& r : manifest.records)
        out << r.image_path << "," << manifest.original_person_ids[r.person_id] << ","
            << platform_name(r.platform) << "," << r.camera_id << "," << r.frame_index << "\n";
}

std::set<int> load_exclusion_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open exclusion list: " + path);
    std::set<int> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        try {
            out.insert(std::stoi(line));
        } catch (const std::exception&) {
            throw ParseError("exclusion list line " + std::to_string(lineno) + ": bad id");
        }
    }
    return out;
}

SplitResult split_protocol(const DatasetManifest& manifest, double train_fraction,
                           std::uint64_t seed, const std::set<int>& excluded_original_ids,
                           std::size_t queries_per_id) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InvalidParam("train_fraction must be in (0,1)");
    const std::size_t total = manifest.identity_count();
    if (total < 2) throw TooFewIdentities("need at least 2 identities to split");

    std::vector<int> eligible;
    for (std::size_t dense = 0; dense < total; ++dense)
        if (!excluded_original_ids.count(manifest.original_person_ids[dense]))
            eligible.push_back(static_cast<int>(dense));
    if (eligible.size() < 2) throw TooFewIdentities("fewer than 2 identities after exclusions");

    // Train count follows the pre-exclusion identity total; excluded
    // identities join neither side.
    std::size_t train_count = static_cast<std::size_t>(
        std::floor(static_cast<double>(total) * train_fraction + 0.5));
    train_count = std::min(train_count, eligible.size() - 1);
    train_count = std::max<std::size_t>(train_count, 1);

    std::mt19937_64 rng(seed);
    std::vector<int> shuffled = eligible;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    SplitResult result;
    result.train_ids.assign(shuffled.begin(), shuffled.begin() + train_count);
    result.test_ids.assign(shuffled.begin() + train_count, shuffled.end());
    std::sort(result.train_ids.begin(), result.train_ids.end());
    std::sort(result.test_ids.begin(), result.test_ids.end());

    std::set<int> test_set(result.test_ids.begin(), result.test_ids.end());
    std::map<int, std::map<Platform, std::vector<std::size_t>>> by_id_platform;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        if (test_set.count(r.person_id)) by_id_platform[r.person_id][r.platform].push_back(i);
    }
    for (const auto& [id, platforms] : by_id_platform) {
        if (platforms.size() < 2) {
            result.warnings.push_back("identity " + std::to_string(id) +
                                      " has images on a single platform; gallery-only");
            for (const auto& [p, recs] : platforms)
                result.gallery.insert(result.gallery.end(), recs.begin(), recs.end());
            continue;
        }
        for (const auto& [p, recs] : platforms) {
            const std::size_t q = std::min(queries_per_id, recs.size() - 1);
            for (std::size_t j = 0; j < recs.size(); ++j)
                (j < q ? result.query : result.gallery).push_back(recs[j]);
        }
    }
    std::sort(result.query.begin(), result.query.end());
    std::sort(result.gallery.begin(), result.gallery.end());
    return result;
}

namespace {

Tensor load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open png: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ParseError("png decode failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const std::size_t H = png_get_image_height(png, info);
    const std::size_t W = png_get_image_width(png, info);
    std::vector<png_byte> row(W * 3);
    Tensor img({3, H, W});
    for (std::size_t y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<double>(row[x * 3 + c]) / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void save_png(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeMismatch("save_png expects [3,H,W]");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write png: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png encode failed: " + path);
    }
    const std::size_t H = img.dim(1), W = img.dim(2);
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(W * 3);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                row[x * 3 + c] = static_cast<png_byte>(
                    std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Tensor load_image(const std::string& path) {
    if (ends_with(path, ".atrt")) return Tensor::load(path);
    if (ends_with(path, ".png")) return load_png(path);
    throw ParseError("unsupported image format: " + path);
}

void save_image(const std::string& path, const Tensor& image) {
    if (ends_with(path, ".atrt")) {
        image.save(path);
    } else if (ends_with(path, ".png")) {
        save_png(path, image);
    } else {
        throw ParseError("unsupported image format: " + path);
    }
}

void save_dataset(const std::string& dir, const Dataset& dataset, const AttributeSchema& schema,
                  bool png_images) {
    fs::create_directories(fs::path(dir) / "images");
    DatasetManifest manifest = dataset.manifest;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        std::string& rel = manifest.records[i].image_path;
        if (png_images && ends_with(rel, ".atrt"))
            rel = rel.substr(0, rel.size() - 5) + ".png";
        save_image((fs::path(dir) / rel).string(), dataset.images[i]);
    }
    save_manifest((fs::path(dir) / "manifest.csv").string(), manifest);
    AttributeTable original_table;
    for (const auto& [dense, raw] : manifest.attribute_table)
        original_table[manifest.original_person_ids[dense]] = raw;
    save_attribute_table((fs::path(dir) / "attributes.csv").string(), schema, original_table);
    schema.save((fs::path(dir) / "schema.txt").string());
}

Dataset load_dataset(const std::string& dir, const AttributeSchema& schema) {
    Dataset ds;
    ds.manifest = load_manifest((fs::path(dir) / "manifest.csv").string(),
                                (fs::path(dir) / "attributes.csv").string(), schema);
    ds.images.reserve(ds.manifest.records.size());
    for (const auto& r : ds.manifest.records)
        ds.images.push_back(load_image((fs::path(dir) / r.image_path).string()));
    return ds;
}

}  // namespace attreid
