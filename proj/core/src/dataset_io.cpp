#include "metareg/dataset_io.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace metareg {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "raw volumes are stored little-endian");

namespace {

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  return f;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream f(path, mode);
  if (!f) throw DataError("cannot read " + path);
  return f;
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

void write_landmark_table(const std::string& path, const std::vector<Landmark>& lms) {
  auto f = open_out(path);
  f << "name x_mm y_mm z_mm\n";
  for (const Landmark& lm : lms) {
    f << lm.name << ' ' << fmt(lm.centroid_mm[0]) << ' ' << fmt(lm.centroid_mm[1]) << ' ' << fmt(lm.centroid_mm[2])
      << '\n';
  }
}

std::vector<std::pair<std::string, Vec3>> read_landmark_table(const std::string& path) {
  auto f = open_in(path);
  std::string line;
  std::getline(f, line);
  if (line != "name x_mm y_mm z_mm") throw DataError(path + ": unexpected landmark table header");
  std::vector<std::pair<std::string, Vec3>> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::pair<std::string, Vec3> row;
    if (!(is >> row.first >> row.second[0] >> row.second[1] >> row.second[2])) {
      throw DataError(path + ": malformed landmark row '" + line + "'");
    }
    out.push_back(std::move(row));
  }
  return out;
}

// Landmark labels are stored as one multi-channel raw volume.
void write_landmarks(const std::string& dir, const std::string& side, const std::vector<Landmark>& lms,
                     const Shape& grid, double spacing) {
  write_landmark_table(dir + "/" + side + "_landmarks.txt", lms);
  const auto n = static_cast<std::int64_t>(lms.size());
  Tensor<float> stack({n, grid[0], grid[1], grid[2]});
  const std::int64_t vox = grid[0] * grid[1] * grid[2];
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& src = lms[static_cast<std::size_t>(i)].label.data;
    std::copy(src.raw(), src.raw() + vox, stack.raw() + i * vox);
  }
  write_raw(dir + "/" + side + "_landmarks", stack, spacing);
}

std::vector<Landmark> read_landmarks(const std::string& dir, const std::string& side) {
  const auto table = read_landmark_table(dir + "/" + side + "_landmarks.txt");
  double spacing = 1.0;
  const Tensor<float> stack = read_raw(dir + "/" + side + "_landmarks", &spacing);
  if (stack.rank() != 4 || stack.dim(0) != static_cast<std::int64_t>(table.size())) {
    throw DataError(dir + ": " + side + " landmark volume does not match its table");
  }
  const Shape grid{stack.dim(1), stack.dim(2), stack.dim(3)};
  const std::int64_t vox = grid[0] * grid[1] * grid[2];
  std::vector<Landmark> out;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto begin = stack.data().begin() + static_cast<std::ptrdiff_t>(i) * vox;
    Volume label(Tensor<float>(grid, std::vector<float>(begin, begin + vox)), spacing);
    out.push_back({table[i].first, std::move(label), table[i].second});
  }
  return out;
}

}  // namespace

void write_raw(const std::string& stem, const Tensor<float>& data, double spacing) {
  if (data.rank() != 3 && data.rank() != 4) throw DimensionError("raw volumes must be [D,H,W] or [C,D,H,W]");
  const std::int64_t channels = data.rank() == 4 ? data.dim(0) : 1;
  const std::size_t off = data.rank() == 4 ? 1 : 0;
  {
    auto f = open_out(stem + ".hdr");
    f << "dims " << data.dim(off) << ' ' << data.dim(off + 1) << ' ' << data.dim(off + 2) << '\n'
      << "spacing " << fmt(spacing) << '\n'
      << "dtype f32le\n"
      << "channels " << channels << '\n';
  }
  auto f = open_out(stem + ".raw", std::ios::out | std::ios::binary);
  f.write(reinterpret_cast<const char*>(data.raw()), static_cast<std::streamsize>(data.numel() * sizeof(float)));
  if (!f) throw DataError("short write to " + stem + ".raw");
}

Tensor<float> read_raw(const std::string& stem, double* spacing) {
  auto h = open_in(stem + ".hdr");
  Shape dims;
  double sp = 0.0;
  std::string dtype;
  std::int64_t channels = 0;
  std::string key;
  while (h >> key) {
    if (key == "dims") {
      dims.resize(3);
      h >> dims[0] >> dims[1] >> dims[2];
    } else if (key == "spacing") {
      h >> sp;
    } else if (key == "dtype") {
      h >> dtype;
    } else if (key == "channels") {
      h >> channels;
    } else {
      throw DataError(stem + ".hdr: unknown key '" + key + "'");
    }
    if (!h) throw DataError(stem + ".hdr: malformed value for '" + key + "'");
  }
  if (dims.size() != 3 || dtype != "f32le" || channels < 1 || !(sp > 0.0)) {
    throw DataError(stem + ".hdr: incomplete or unsupported header");
  }
  for (auto d : dims) {
    if (d < 1) throw DataError(stem + ".hdr: nonpositive dimension");
  }
  Shape shape = channels == 1 ? dims : Shape{channels, dims[0], dims[1], dims[2]};
  std::vector<float> buf(static_cast<std::size_t>(shape_numel(shape)));
  auto f = open_in(stem + ".raw", std::ios::in | std::ios::binary);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
    throw DataError(stem + ".raw: payload shorter than header dims");
  }
  if (f.peek() != std::char_traits<char>::eof()) throw DataError(stem + ".raw: payload longer than header dims");
  if (spacing) *spacing = sp;
  return Tensor<float>(std::move(shape), std::move(buf));
}

void write_volume(const std::string& stem, const Volume& v) { write_raw(stem, v.data, v.spacing); }

Volume read_volume(const std::string& stem) {
  double sp = 1.0;
  Tensor<float> t = read_raw(stem, &sp);
  if (t.rank() != 3) throw DataError(stem + ": expected a single-channel volume");
  return Volume(std::move(t), sp);
}

void write_task(const std::string& dir, const Task& task) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
  {
    auto f = open_out(dir + "/case.txt");
    f << "case_id " << task.case_id << "\nspacing " << fmt(task.spacing) << "\ngt_valid " << (task.gt_valid ? 1 : 0)
      << '\n';
  }
  write_volume(dir + "/source_image", task.source_image);
  write_volume(dir + "/source_gland", task.source_gland);
  write_volume(dir + "/target_image", task.target_image);
  write_volume(dir + "/target_gland", task.target_gland);
  write_raw(dir + "/gt_ddf", task.gt_ddf.data, task.gt_ddf.spacing);
  write_landmarks(dir, "source", task.source_landmarks, task.source_gland.grid(), task.spacing);
  write_landmarks(dir, "target", task.target_landmarks, task.target_gland.grid(), task.spacing);
}

Task read_task(const std::string& dir) {
  Task t;
  {
    auto f = open_in(dir + "/case.txt");
    std::string key;
    int gt = 1;
    if (!(f >> key >> t.case_id) || key != "case_id" || !(f >> key >> t.spacing) || key != "spacing" ||
        !(f >> key >> gt) || key != "gt_valid") {
      throw DataError(dir + "/case.txt: malformed");
    }
    t.gt_valid = gt != 0;
  }
  t.source_image = read_volume(dir + "/source_image");
  t.source_gland = read_volume(dir + "/source_gland");
  t.target_image = read_volume(dir + "/target_image");
  t.target_gland = read_volume(dir + "/target_gland");
  double sp = 1.0;
  Tensor<float> ddf = read_raw(dir + "/gt_ddf", &sp);
  t.gt_ddf = DisplacementField(std::move(ddf), sp);
  t.source_landmarks = read_landmarks(dir, "source");
  t.target_landmarks = read_landmarks(dir, "target");
  const Shape& g = t.source_image.grid();
  for (const Volume* v : {&t.source_gland, &t.target_image, &t.target_gland}) {
    if (v->grid() != g) throw DataError(dir + ": volumes have inconsistent grids");
  }
  if (t.gt_ddf.grid() != g) throw DataError(dir + ": gt_ddf grid differs from the volumes");
  if (t.source_landmarks.size() != t.target_landmarks.size()) {
    throw DataError(dir + ": source and target landmark counts differ");
  }
  return t;
}

std::vector<std::string> Manifest::split(const std::string& name) const {
  std::vector<std::string> ids;
  for (const auto& c : cases) {
    if (c.split == name) ids.push_back(c.case_id);
  }
  return ids;
}

void write_manifest(const std::string& dataset_dir, const Manifest& m) {
  std::error_code ec;
  fs::create_directories(dataset_dir, ec);
  if (ec) throw DataError("cannot create " + dataset_dir + ": " + ec.message());
  auto f = open_out(dataset_dir + "/" + kManifestFile);
  f << "metareg-dataset 1\nconfig_hash " << m.config_hash << "\nseed " << m.experiment_seed << "\ncases "
    << m.cases.size() << '\n';
  for (const auto& c : m.cases) f << c.case_id << ' ' << c.split << ' ' << c.seed << '\n';
}

Manifest read_manifest(const std::string& dataset_dir) {
  const std::string path = dataset_dir + "/" + kManifestFile;
  auto f = open_in(path);
  Manifest m;
  std::string key;
  int version = 0;
  std::size_t n = 0;
  if (!(f >> key >> version) || key != "metareg-dataset" || version != 1) throw DataError(path + ": not a dataset manifest");
  if (!(f >> key >> m.config_hash) || key != "config_hash") throw DataError(path + ": missing config_hash");
  if (!(f >> key >> m.experiment_seed) || key != "seed") throw DataError(path + ": missing seed");
  if (!(f >> key >> n) || key != "cases") throw DataError(path + ": missing case count");
  for (std::size_t i = 0; i < n; ++i) {
    ManifestEntry e;
    if (!(f >> e.case_id >> e.split >> e.seed)) throw DataError(path + ": truncated case list");
    if (e.split != "train" && e.split != "test") throw DataError(path + ": unknown split '" + e.split + "'");
    m.cases.push_back(std::move(e));
  }
  return m;
}

std::vector<Task> load_split(const std::string& dataset_dir, const std::string& split) {
  const Manifest m = read_manifest(dataset_dir);
  std::vector<Task> tasks;
  for (const auto& id : m.split(split)) tasks.push_back(read_task(dataset_dir + "/" + split + "/" + id));
  if (tasks.empty()) throw DataError(dataset_dir + ": split '" + split + "' has no cases");
  return tasks;
}

}  // namespace metareg
