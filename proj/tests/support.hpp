#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "relabel/dataset.hpp"
#include "relabel/types.hpp"

namespace test {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "relabel-test-XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline relabel::Item item(std::string id, relabel::Payload payload, relabel::Label label,
                          relabel::Split split = relabel::Split::train) {
  relabel::Item it;
  it.id = std::move(id);
  it.payload = std::move(payload);
  it.split = split;
  it.label_history.push_back({0, relabel::LabelSource::human, std::move(label)});
  return it;
}

inline relabel::Item text_item(std::string id, std::string text, std::string cls,
                               relabel::Split split = relabel::Split::train) {
  return item(std::move(id), std::move(text), relabel::ClassLabel{std::move(cls)}, split);
}

inline relabel::DatasetVersion version_of(relabel::TaskKind task, std::vector<relabel::Item> items) {
  return relabel::make_version(task, 0, std::nullopt, std::move(items));
}

inline relabel::Prediction pred(std::string id, relabel::Label value,
                                std::optional<double> score = std::nullopt) {
  relabel::Prediction p;
  p.item_id = std::move(id);
  p.value = std::move(value);
  p.score = score;
  p.model_id = "test-model";
  p.round = 1;
  return p;
}

// Predictions equal to the current labels for every item.
inline std::vector<relabel::Prediction> echo_predictions(const relabel::DatasetVersion& v) {
  std::vector<relabel::Prediction> out;
  for (const auto& it : v.items) out.push_back(pred(it.id, it.label()));
  return out;
}

}  // namespace test

#include "relabel/error.hpp"

namespace test {

// Error code thrown by f, or nullopt when it returns normally.
template <class F>
std::optional<relabel::ErrorCode> error_of(F&& f) {
  try {
    f();
  } catch (const relabel::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

template <class F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const relabel::Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace test
