#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fairehr/data.hpp"
#include "fairehr/error.hpp"
#include "fairehr/random.hpp"

namespace fairehr {

using nlohmann::json;

std::string_view attribute_name(Attribute attribute) {
  switch (attribute) {
  case Attribute::kGender:
    return "gender";
  case Attribute::kRace:
    return "race";
  case Attribute::kEthnicity:
    return "ethnicity";
  case Attribute::kAge:
    return "age";
  case Attribute::kSes:
    return "ses";
  }
  return "unknown";
}

Attribute parse_attribute(std::string_view name) {
  for (const Attribute a : kAllAttributes) {
    if (attribute_name(a) == name) {
      return a;
    }
  }
  fail(ErrorKind::kConfig, "unknown sensitive attribute '" + std::string(name) + "'");
}

int SensitiveAttributes::category(Attribute attribute) const {
  switch (attribute) {
  case Attribute::kGender:
    return gender;
  case Attribute::kRace:
    return race;
  case Attribute::kEthnicity:
    return ethnicity;
  case Attribute::kSes:
    return ses;
  case Attribute::kAge:
    break;
  }
  fail(ErrorKind::kContract, "age is not a categorical attribute");
}

void SensitiveAttributes::set_category(Attribute attribute, int value) {
  switch (attribute) {
  case Attribute::kGender:
    gender = value;
    return;
  case Attribute::kRace:
    race = value;
    return;
  case Attribute::kEthnicity:
    ethnicity = value;
    return;
  case Attribute::kSes:
    ses = value;
    return;
  case Attribute::kAge:
    break;
  }
  fail(ErrorKind::kContract, "age is not a categorical attribute");
}

const std::vector<std::string> &AttributeVocabularies::of(Attribute attribute) const {
  return const_cast<AttributeVocabularies *>(this)->of(attribute);
}

std::vector<std::string> &AttributeVocabularies::of(Attribute attribute) {
  switch (attribute) {
  case Attribute::kGender:
    return gender;
  case Attribute::kRace:
    return race;
  case Attribute::kEthnicity:
    return ethnicity;
  case Attribute::kSes:
    return ses;
  case Attribute::kAge:
    break;
  }
  fail(ErrorKind::kContract, "age has no vocabulary");
}

int AttributeVocabularies::index_of(Attribute attribute, std::string_view value) const {
  const auto &vocab = of(attribute);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == value) {
      return static_cast<int>(i);
    }
  }
  fail(ErrorKind::kSchema, "category '" + std::string(value) + "' not in " +
                               std::string(attribute_name(attribute)) + " vocabulary");
}

int AgeBinning::bin_of(int age) const {
  require(age >= min_age, ErrorKind::kDomain,
          "age " + std::to_string(age) + " below cohort minimum " + std::to_string(min_age));
  return std::min((age - min_age) / width, bins - 1);
}

std::pair<int, int> AgeBinning::range(int bin) const {
  require(bin >= 0 && bin < bins, ErrorKind::kContract, "age bin out of range");
  const int lo = min_age + bin * width;
  const int hi = bin == bins - 1 ? cap : lo + width - 1;
  return {lo, hi};
}

std::string AgeBinning::label(int bin) const {
  const auto [lo, hi] = range(bin);
  if (bin == bins - 1) {
    return std::to_string(lo) + "+";
  }
  return std::to_string(lo) + "-" + std::to_string(hi + 1);
}

std::vector<std::size_t> Cohort::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (split_of(records[i].id) == which) {
      out.push_back(i);
    }
  }
  return out;
}

const PatientRecord &Cohort::find(const std::string &id) const {
  for (const auto &r : records) {
    if (r.id == id) {
      return r;
    }
  }
  fail(ErrorKind::kContract, "unknown patient id '" + id + "'");
}

Split Cohort::split_of(const std::string &id) const {
  const auto it = split.find(id);
  require(it != split.end(), ErrorKind::kContract, "record '" + id + "' has no split");
  return it->second;
}

bool Cohort::has_missing() const {
  for (const auto &r : records) {
    if (!r.longitudinal.allFinite()) {
      return true;
    }
  }
  return false;
}

void validate(const Cohort &cohort) {
  const auto &schema = cohort.schema;
  require(schema.time_steps >= 1 && schema.feature_count() >= 1, ErrorKind::kSchema,
          "cohort schema needs at least one time step and one feature");
  require(schema.age_bins.bins >= 1 && schema.age_bins.width >= 1, ErrorKind::kSchema,
          "age binning needs at least one bin of positive width");
  std::set<std::string> seen;
  for (const auto &r : cohort.records) {
    require(seen.insert(r.id).second, ErrorKind::kIngestion, "duplicate patient id '" + r.id + "'");
    for (const Attribute a : kCategoricalAttributes) {
      const int c = r.s.category(a);
      require(c >= 0 && c < static_cast<int>(schema.vocabularies.of(a).size()),
              ErrorKind::kSchema,
              "record '" + r.id + "': " + std::string(attribute_name(a)) + " id out of vocabulary");
    }
    require(r.s.age >= 0, ErrorKind::kSchema, "record '" + r.id + "': negative age");
    if (schema.min_age) {
      require(r.s.age >= *schema.min_age, ErrorKind::kSchema,
              "record '" + r.id + "': age below inclusion minimum");
    }
    require(r.longitudinal.rows() == schema.time_steps &&
                r.longitudinal.cols() == schema.feature_count(),
            ErrorKind::kSchema, "record '" + r.id + "': longitudinal shape mismatch");
    require(r.observed.rows() == r.longitudinal.rows() &&
                r.observed.cols() == r.longitudinal.cols(),
            ErrorKind::kSchema, "record '" + r.id + "': mask shape mismatch");
    require(r.note_embedding.size() == schema.note_dim, ErrorKind::kSchema,
            "record '" + r.id + "': note embedding dimension mismatch");
    require(r.label == 0 || r.label == 1, ErrorKind::kSchema,
            "record '" + r.id + "': label must be 0 or 1");
    require(cohort.split.count(r.id) == 1, ErrorKind::kSchema,
            "record '" + r.id + "' has no split assignment");
  }
  require(cohort.split.size() == cohort.records.size(), ErrorKind::kSchema,
          "split assigns ids that are not in the cohort");
}

// ---------------------------------------------------------------------------
// Text helpers

std::string canonical_json(const json &doc) { return doc.dump() + "\n"; }

void write_text(const std::filesystem::path &path, const std::string &text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    cells.emplace_back();
  }
  return cells;
}

std::vector<std::string> read_lines(const std::filesystem::path &path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    lines.push_back(line);
  }
  return lines;
}

std::string where(const std::filesystem::path &path, std::size_t line) {
  return path.filename().string() + " line " + std::to_string(line);
}

int parse_int(const std::string &text, const std::string &context) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    require(used == text.size(), ErrorKind::kParse, context + ": not an integer '" + text + "'");
    return v;
  } catch (const std::logic_error &) {
    fail(ErrorKind::kParse, context + ": not an integer '" + text + "'");
  }
}

json parse_json_line(const std::string &line, const std::string &context) {
  try {
    json doc = json::parse(line);
    require(doc.is_object(), ErrorKind::kParse, context + ": expected a JSON object");
    return doc;
  } catch (const json::exception &e) {
    fail(ErrorKind::kParse, context + ": " + e.what());
  }
}

int intern(std::vector<std::string> &vocab, const std::string &value) {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i] == value) {
      return static_cast<int>(i);
    }
  }
  vocab.push_back(value);
  return static_cast<int>(vocab.size() - 1);
}

json matrix_rows(const Eigen::MatrixXd &m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (std::isfinite(m(r, c))) {
        row.push_back(m(r, c));
      } else {
        row.push_back(nullptr);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json mask_rows(const BoolMatrix &m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      row.push_back(static_cast<bool>(m(r, c)));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd &v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out.push_back(v(i));
  }
  return out;
}

/// Reads values/mask arrays; shape is taken from `values` unless given.
void parse_longitudinal(const json &values, const json &mask, const std::string &context,
                        int &time_steps, int &features, Eigen::MatrixXd &out_values,
                        BoolMatrix &out_mask) {
  require(values.is_array() && mask.is_array(), ErrorKind::kParse,
          context + ": 'values' and 'mask' must be arrays");
  const int t = static_cast<int>(values.size());
  const int f = t > 0 && values[0].is_array() ? static_cast<int>(values[0].size()) : 0;
  if (time_steps < 0) {
    time_steps = t;
    features = f;
  }
  require(t == time_steps && f == features && t > 0 && f > 0, ErrorKind::kSchema,
          context + ": longitudinal shape " + std::to_string(t) + "x" + std::to_string(f) +
              " differs from " + std::to_string(time_steps) + "x" + std::to_string(features));
  require(mask.size() == values.size(), ErrorKind::kSchema, context + ": mask shape differs");
  out_values.resize(t, f);
  out_mask.resize(t, f);
  for (int r = 0; r < t; ++r) {
    require(values[r].is_array() && static_cast<int>(values[r].size()) == f &&
                mask[r].is_array() && static_cast<int>(mask[r].size()) == f,
            ErrorKind::kSchema, context + ": ragged longitudinal row " + std::to_string(r));
    for (int c = 0; c < f; ++c) {
      require(mask[r][c].is_boolean(), ErrorKind::kParse, context + ": mask entries must be booleans");
      const bool seen = mask[r][c].get<bool>();
      out_mask(r, c) = seen;
      if (values[r][c].is_null()) {
        require(!seen, ErrorKind::kParse, context + ": observed entry is null");
        out_values(r, c) = std::numeric_limits<double>::quiet_NaN();
      } else {
        require(values[r][c].is_number(), ErrorKind::kParse, context + ": non-numeric value");
        out_values(r, c) = values[r][c].get<double>();
      }
    }
  }
}

Eigen::VectorXd parse_vector(const json &arr, const std::string &context) {
  require(arr.is_array(), ErrorKind::kParse, context + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    require(arr[i].is_number(), ErrorKind::kParse, context + ": non-numeric entry");
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  return v;
}

} // namespace

CohortPaths CohortPaths::in_directory(const std::filesystem::path &dir) {
  return {dir / "demographics.csv", dir / "longitudinal.jsonl", dir / "notes.jsonl",
          dir / "labels.csv"};
}

Cohort load_cohort(const CohortPaths &paths) {
  Cohort cohort;
  auto &schema = cohort.schema;

  // Demographics define the record order.
  const auto demo = read_lines(paths.demographics);
  require(!demo.empty() && demo[0] == "id,gender,race,ethnicity,age,ses", ErrorKind::kParse,
          where(paths.demographics, 1) + ": expected header 'id,gender,race,ethnicity,age,ses'");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < demo.size(); ++i) {
    if (demo[i].empty()) {
      continue;
    }
    const auto cells = split_csv_line(demo[i]);
    const std::string ctx = where(paths.demographics, i + 1);
    require(cells.size() == 6, ErrorKind::kParse, ctx + ": expected 6 columns");
    require(!cells[0].empty(), ErrorKind::kParse, ctx + ": empty id");
    PatientRecord r;
    r.id = cells[0];
    r.s.gender = intern(schema.vocabularies.gender, cells[1]);
    r.s.race = intern(schema.vocabularies.race, cells[2]);
    r.s.ethnicity = intern(schema.vocabularies.ethnicity, cells[3]);
    r.s.age = parse_int(cells[4], ctx);
    require(r.s.age >= 0, ErrorKind::kParse, ctx + ": negative age");
    r.s.ses = intern(schema.vocabularies.ses, cells[5]);
    require(index.emplace(r.id, cohort.records.size()).second, ErrorKind::kIngestion,
            ctx + ": duplicate id '" + r.id + "'");
    cohort.records.push_back(std::move(r));
  }

  std::set<std::string> orphans;
  auto lookup = [&](const std::string &id) -> PatientRecord * {
    const auto it = index.find(id);
    if (it == index.end()) {
      orphans.insert(id);
      return nullptr;
    }
    return &cohort.records[it->second];
  };

  const auto label_lines = read_lines(paths.labels);
  require(!label_lines.empty() && label_lines[0] == "id,label", ErrorKind::kParse,
          where(paths.labels, 1) + ": expected header 'id,label'");
  std::set<std::string> have_label, have_long, have_note;
  for (std::size_t i = 1; i < label_lines.size(); ++i) {
    if (label_lines[i].empty()) {
      continue;
    }
    const auto cells = split_csv_line(label_lines[i]);
    const std::string ctx = where(paths.labels, i + 1);
    require(cells.size() == 2, ErrorKind::kParse, ctx + ": expected 2 columns");
    const int label = parse_int(cells[1], ctx);
    require(label == 0 || label == 1, ErrorKind::kParse, ctx + ": label must be 0 or 1");
    if (auto *r = lookup(cells[0])) {
      r->label = label;
      have_label.insert(cells[0]);
    }
  }

  int time_steps = -1;
  int features = -1;
  const auto long_lines = read_lines(paths.longitudinal);
  for (std::size_t i = 0; i < long_lines.size(); ++i) {
    if (long_lines[i].empty()) {
      continue;
    }
    const std::string ctx = where(paths.longitudinal, i + 1);
    const json doc = parse_json_line(long_lines[i], ctx);
    require(doc.contains("id") && doc["id"].is_string(), ErrorKind::kParse, ctx + ": missing id");
    require(doc.contains("values") && doc.contains("mask"), ErrorKind::kParse,
            ctx + ": missing 'values' or 'mask'");
    Eigen::MatrixXd values;
    BoolMatrix mask;
    parse_longitudinal(doc["values"], doc["mask"], ctx, time_steps, features, values, mask);
    const auto id = doc["id"].get<std::string>();
    if (auto *r = lookup(id)) {
      r->longitudinal = std::move(values);
      r->observed = std::move(mask);
      have_long.insert(id);
    }
  }

  int note_dim = -1;
  const auto note_lines = read_lines(paths.notes);
  for (std::size_t i = 0; i < note_lines.size(); ++i) {
    if (note_lines[i].empty()) {
      continue;
    }
    const std::string ctx = where(paths.notes, i + 1);
    const json doc = parse_json_line(note_lines[i], ctx);
    require(doc.contains("id") && doc["id"].is_string(), ErrorKind::kParse, ctx + ": missing id");
    require(doc.contains("embedding"), ErrorKind::kParse, ctx + ": missing 'embedding'");
    Eigen::VectorXd v = parse_vector(doc["embedding"], ctx);
    if (note_dim < 0) {
      note_dim = static_cast<int>(v.size());
    }
    require(v.size() == note_dim, ErrorKind::kSchema,
            ctx + " (row " + std::to_string(i + 1) + "): note embedding has dimension " +
                std::to_string(v.size()) + ", expected " + std::to_string(note_dim));
    const auto id = doc["id"].get<std::string>();
    if (auto *r = lookup(id)) {
      r->note_embedding = std::move(v);
      have_note.insert(id);
    }
  }

  for (const auto &r : cohort.records) {
    if (!have_label.count(r.id) || !have_long.count(r.id) || !have_note.count(r.id)) {
      orphans.insert(r.id);
    }
  }
  if (!orphans.empty()) {
    std::string list;
    for (const auto &id : orphans) {
      list += (list.empty() ? "" : ", ") + id;
    }
    fail(ErrorKind::kIngestion, "ids not present in all four files: " + list);
  }

  schema.time_steps = std::max(time_steps, 0);
  schema.note_dim = std::max(note_dim, 0);
  for (int f = 0; f < features; ++f) {
    schema.features.push_back({"f" + std::to_string(f), ""});
  }
  int youngest = std::numeric_limits<int>::max();
  for (auto &r : cohort.records) {
    cohort.split[r.id] = Split::kTrain;
    youngest = std::min(youngest, r.s.age);
  }
  // Bins start at the youngest loaded age when it is below the default floor.
  if (!cohort.records.empty() && youngest < schema.age_bins.min_age) {
    schema.age_bins.min_age = (youngest / 10) * 10;
    schema.age_bins.bins = (90 - schema.age_bins.min_age) / 10 + 1;
  }
  validate(cohort);
  return cohort;
}

void write_cohort_files(const Cohort &cohort, const CohortPaths &paths) {
  const auto &v = cohort.schema.vocabularies;
  std::string demo = "id,gender,race,ethnicity,age,ses\n";
  std::string labels = "id,label\n";
  std::string longitudinal;
  std::string notes;
  for (const auto &r : cohort.records) {
    demo += r.id + "," + v.gender[r.s.gender] + "," + v.race[r.s.race] + "," +
            v.ethnicity[r.s.ethnicity] + "," + std::to_string(r.s.age) + "," + v.ses[r.s.ses] +
            "\n";
    labels += r.id + "," + std::to_string(r.label) + "\n";
    json l;
    l["id"] = r.id;
    l["values"] = matrix_rows(r.longitudinal);
    l["mask"] = mask_rows(r.observed);
    longitudinal += l.dump() + "\n";
    json n;
    n["id"] = r.id;
    n["embedding"] = vector_json(r.note_embedding);
    notes += n.dump() + "\n";
  }
  write_text(paths.demographics, demo);
  write_text(paths.labels, labels);
  write_text(paths.longitudinal, longitudinal);
  write_text(paths.notes, notes);
}

json cohort_to_json(const Cohort &cohort) {
  const auto &schema = cohort.schema;
  json doc;
  doc["format"] = "fairehr-cohort";
  doc["version"] = 1;
  json s;
  s["time_steps"] = schema.time_steps;
  s["note_dim"] = schema.note_dim;
  json features = json::array();
  for (const auto &f : schema.features) {
    features.push_back({{"name", f.name}, {"unit", f.unit}});
  }
  s["features"] = features;
  json vocab;
  for (const Attribute a : kCategoricalAttributes) {
    vocab[std::string(attribute_name(a))] = schema.vocabularies.of(a);
  }
  s["vocabularies"] = vocab;
  s["min_age"] = schema.min_age ? json(*schema.min_age) : json(nullptr);
  s["age_bins"] = {{"min_age", schema.age_bins.min_age},
                   {"width", schema.age_bins.width},
                   {"bins", schema.age_bins.bins},
                   {"cap", schema.age_bins.cap}};
  s["metadata"] = schema.metadata;
  doc["schema"] = s;
  json records = json::array();
  for (const auto &r : cohort.records) {
    json rec;
    rec["id"] = r.id;
    for (const Attribute a : kCategoricalAttributes) {
      rec[std::string(attribute_name(a))] = schema.vocabularies.of(a)[r.s.category(a)];
    }
    rec["age"] = r.s.age;
    rec["label"] = r.label;
    rec["split"] = cohort.split_of(r.id) == Split::kTrain ? "train" : "test";
    rec["values"] = matrix_rows(r.longitudinal);
    rec["mask"] = mask_rows(r.observed);
    rec["embedding"] = vector_json(r.note_embedding);
    records.push_back(std::move(rec));
  }
  doc["records"] = std::move(records);
  return doc;
}

Cohort cohort_from_json(const json &doc) {
  try {
    require(doc.value("format", "") == "fairehr-cohort", ErrorKind::kParse,
            "not a cohort archive (format tag missing)");
    Cohort cohort;
    auto &schema = cohort.schema;
    const json &s = doc.at("schema");
    schema.time_steps = s.at("time_steps").get<int>();
    schema.note_dim = s.at("note_dim").get<int>();
    for (const auto &f : s.at("features")) {
      schema.features.push_back({f.at("name").get<std::string>(), f.at("unit").get<std::string>()});
    }
    for (const Attribute a : kCategoricalAttributes) {
      schema.vocabularies.of(a) =
          s.at("vocabularies").at(std::string(attribute_name(a))).get<std::vector<std::string>>();
    }
    if (!s.at("min_age").is_null()) {
      schema.min_age = s.at("min_age").get<int>();
    }
    const json &bins = s.at("age_bins");
    schema.age_bins = {bins.at("min_age").get<int>(), bins.at("width").get<int>(),
                       bins.at("bins").get<int>(), bins.at("cap").get<int>()};
    schema.metadata = s.value("metadata", json::object());
    int t = schema.time_steps;
    int f = schema.feature_count();
    std::size_t row = 0;
    for (const auto &rec : doc.at("records")) {
      ++row;
      const std::string ctx = "cohort record " + std::to_string(row);
      PatientRecord r;
      r.id = rec.at("id").get<std::string>();
      for (const Attribute a : kCategoricalAttributes) {
        r.s.set_category(a, schema.vocabularies.index_of(
                                a, rec.at(std::string(attribute_name(a))).get<std::string>()));
      }
      r.s.age = rec.at("age").get<int>();
      r.label = rec.at("label").get<int>();
      parse_longitudinal(rec.at("values"), rec.at("mask"), ctx, t, f, r.longitudinal, r.observed);
      r.note_embedding = parse_vector(rec.at("embedding"), ctx);
      const auto split_name = rec.at("split").get<std::string>();
      require(split_name == "train" || split_name == "test", ErrorKind::kParse,
              ctx + ": split must be 'train' or 'test'");
      cohort.split[r.id] = split_name == "train" ? Split::kTrain : Split::kTest;
      cohort.records.push_back(std::move(r));
    }
    validate(cohort);
    return cohort;
  } catch (const json::exception &e) {
    fail(ErrorKind::kParse, std::string("cohort archive: ") + e.what());
  }
}

void save_cohort(const Cohort &cohort, const std::filesystem::path &path) {
  write_text(path, canonical_json(cohort_to_json(cohort)));
}

Cohort load_cohort_archive(const std::filesystem::path &path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception &e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  return cohort_from_json(doc);
}

Cohort split(const Cohort &cohort, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::kConfig,
          "train fraction must lie strictly between 0 and 1");
  Cohort out = cohort;
  std::vector<std::size_t> order(cohort.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const auto n_train =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  out.split.clear();
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.split[cohort.records[order[k]].id] = k < n_train ? Split::kTrain : Split::kTest;
  }
  return out;
}

} // namespace fairehr
