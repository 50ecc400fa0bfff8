#include "defletter/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "defletter/checksum.hpp"
#include "defletter/image_io.hpp"
#include "defletter/log.hpp"
#include "defletter/util.hpp"

namespace defletter {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'D', 'L', 'D', 'S'};
constexpr size_t kPackedBytes = kPixels / 8;

bool is_font_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ttf" || ext == ".otf" || ext == ".ttc";
}

std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir, auto predicate) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && predicate(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::array<size_t, 3> split_sizes(size_t n, const SplitRatios& ratios) {
  ratios.validate();
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  std::array<size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  size_t assigned = 0;
  for (size_t i = 0; i < 3; ++i) {
    double exact = r[i] * static_cast<double>(n);
    sizes[i] = static_cast<size_t>(std::floor(exact + 1e-9));
    remainder[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    size_t best = static_cast<size_t>(std::max_element(remainder.begin(), remainder.end()) - remainder.begin());
    ++sizes[best];
    remainder[best] = -1;
    ++assigned;
  }
  if (n >= 3) {
    for (size_t i = 0; i < 3; ++i) {
      if (sizes[i] == 0) {
        size_t donor = static_cast<size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
        --sizes[donor];
        ++sizes[i];
      }
    }
  }
  return sizes;
}

LabeledDataset partition_examples(std::vector<LabeledExample> examples, const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  std::set<std::string> font_set;
  for (const auto& ex : examples) font_set.insert(ex.font_id);
  if (font_set.size() < 3)
    throw Error(ErrorCode::InsufficientFonts, "need at least 3 usable fonts, found " + std::to_string(font_set.size()));

  std::vector<std::string> fonts(font_set.begin(), font_set.end());
  Rng rng(seed);
  shuffle(fonts, rng);
  auto sizes = split_sizes(fonts.size(), ratios);

  LabeledDataset ds;
  ds.seed = seed;
  ds.ratios = ratios;
  auto it = fonts.begin();
  for (auto [split, count] : {std::pair{Split::Train, sizes[0]}, {Split::Val, sizes[1]}, {Split::Test, sizes[2]}}) {
    ds.splits[split] = std::set<std::string>(it, it + static_cast<std::ptrdiff_t>(count));
    it += static_cast<std::ptrdiff_t>(count);
  }
  ds.examples = std::move(examples);
  ds.validate();
  return ds;
}

LabeledDataset build_dataset(const std::filesystem::path& font_dir, const SplitRatios& ratios, std::uint64_t seed,
                             const RasterOptions& raster, BuildReport* report) {
  ratios.validate();
  if (!std::filesystem::is_directory(font_dir))
    throw Error(ErrorCode::IoFailure, "font directory not found: " + font_dir.string());

  BuildReport local;
  BuildReport& rep = report ? *report : local;
  std::vector<LabeledExample> examples;
  for (const auto& path : sorted_files(font_dir, is_font_file)) {
    std::string font_id = std::filesystem::relative(path, font_dir).generic_string();
    std::optional<Font> font;
    try {
      font.emplace(Font::from_file(path));
    } catch (const Error& e) {
      log::warn("skipping font ", font_id, ": ", e.what());
      rep.unparseable_fonts.push_back(font_id);
      continue;
    }
    for (int i = 0; i < kNumClasses; ++i) {
      Letter letter(i);
      try {
        examples.push_back({rasterize_glyph(*font, letter, raster), letter, font_id});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::MissingGlyph && e.code() != ErrorCode::EmptyGlyph &&
            e.code() != ErrorCode::UnparseableFont)
          throw;
        log::debug("skipping glyph ", letter.to_char(), " of ", font_id, ": ", e.what());
        rep.skipped_glyphs.push_back({font_id, letter.to_char(), e.what()});
      }
    }
  }
  if (!rep.skipped_glyphs.empty())
    log::info("skipped ", rep.skipped_glyphs.size(), " missing or empty glyphs");
  return partition_examples(std::move(examples), ratios, seed);
}

LabeledDataset load_png_directory(const std::filesystem::path& dir, const SplitRatios& ratios, std::uint64_t seed) {
  std::vector<LabeledExample> examples;
  for (int i = 0; i < kNumClasses; ++i) {
    Letter letter(i);
    auto class_dir = dir / std::string(1, letter.to_char());
    if (!std::filesystem::is_directory(class_dir)) continue;
    auto files = sorted_files(class_dir, [](const auto& p) { return p.extension() == ".png"; });
    for (const auto& file : files) {
      GrayImage gray = read_png_gray(file);
      if (gray.width != kCanvas || gray.height != kCanvas)
        throw Error(ErrorCode::InvalidArgument, file.string() + " is not 64x64");
      GlyphImage img;
      auto px = img.pixels();
      for (size_t p = 0; p < px.size(); ++p) px[p] = gray.pixels[p] < 128 ? kInk : kBackground;
      examples.push_back({img, letter, file.stem().string()});
    }
  }
  return partition_examples(std::move(examples), ratios, seed);
}

namespace {

std::vector<std::uint8_t> serialize_body(const LabeledDataset& ds) {
  nlohmann::json header;
  header["version"] = kDatasetFormatVersion;
  header["canvas"] = kCanvas;
  header["polarity"] = kPolarity;
  header["seed"] = ds.seed;
  header["ratios"] = {ds.ratios.train, ds.ratios.val, ds.ratios.test};
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [split, fonts] : ds.splits) splits[to_string(split)] = fonts;
  header["splits"] = splits;
  std::string header_text = header.dump();

  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kDatasetFormatVersion);
  w.u32(static_cast<std::uint32_t>(header_text.size()));
  w.str(header_text);
  w.u64(ds.examples.size());
  for (const auto& ex : ds.examples) {
    if (!ex.image.is_binary()) throw Error(ErrorCode::InvalidArgument, "dataset images must be binary");
    if (ex.font_id.size() > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "font id too long");
    w.u16(static_cast<std::uint16_t>(ex.font_id.size()));
    w.str(ex.font_id);
    w.u8(static_cast<std::uint8_t>(ex.label.index()));
    std::array<std::uint8_t, kPackedBytes> packed{};
    auto px = ex.image.pixels();
    for (size_t i = 0; i < px.size(); ++i)
      if (px[i] == kInk) packed[i / 8] |= static_cast<std::uint8_t>(0x80 >> (i % 8));
    w.bytes(packed);
  }
  return std::move(w.buffer());
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const LabeledDataset& ds) {
  auto body = serialize_body(ds);
  Digest digest = sha256(body);
  body.insert(body.end(), digest.begin(), digest.end());
  return body;
}

LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() + 32) throw Error(ErrorCode::CorruptDataset, "file too short");
  auto body = bytes.first(bytes.size() - 32);
  Digest stored{};
  std::copy(bytes.end() - 32, bytes.end(), stored.begin());
  if (sha256(body) != stored) throw Error(ErrorCode::CorruptDataset, "checksum mismatch");

  ByteReader r(body);
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw Error(ErrorCode::CorruptDataset, "bad magic");
  if (r.u32() != kDatasetFormatVersion) throw Error(ErrorCode::CorruptDataset, "unsupported dataset version");
  std::string header_text = r.str(r.u32());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptDataset, std::string("bad header: ") + e.what());
  }
  if (header.value("canvas", 0) != kCanvas) throw Error(ErrorCode::CorruptDataset, "unsupported canvas size");

  LabeledDataset ds;
  ds.seed = header.at("seed").get<std::uint64_t>();
  auto ratios = header.at("ratios").get<std::vector<double>>();
  if (ratios.size() != 3) throw Error(ErrorCode::CorruptDataset, "bad ratios");
  ds.ratios = {ratios[0], ratios[1], ratios[2]};
  for (const auto& [name, fonts] : header.at("splits").items())
    ds.splits[split_from_string(name)] = fonts.get<std::set<std::string>>();

  std::uint64_t count = r.u64();
  if (count > r.remaining()) throw Error(ErrorCode::CorruptDataset, "implausible example count");
  ds.examples.reserve(static_cast<size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    LabeledExample ex;
    ex.font_id = r.str(r.u16());
    std::uint8_t label = r.u8();
    if (label >= kNumClasses) throw Error(ErrorCode::CorruptDataset, "label out of range");
    ex.label = Letter(label);
    auto packed = r.bytes(kPackedBytes);
    auto px = ex.image.pixels();
    for (size_t p = 0; p < px.size(); ++p) px[p] = (packed[p / 8] & (0x80 >> (p % 8))) ? kInk : kBackground;
    ds.examples.push_back(std::move(ex));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptDataset, "trailing bytes after examples");
  ds.validate();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) { write_file(path, serialize_dataset(ds)); }

LabeledDataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

std::string dataset_checksum(const LabeledDataset& ds) { return sha256_hex(serialize_body(ds)); }

}  // namespace defletter
