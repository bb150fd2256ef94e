#ifndef CROWDCALL_TESTS_SUPPORT_HPP
#define CROWDCALL_TESTS_SUPPORT_HPP

#include <unistd.h>

#include <filesystem>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include "crowdcall/crowdcall.hpp"

namespace testing_support {

using namespace crowdcall;

inline Question question(std::string id, const char* open, const char* close, std::optional<bool> answer = true,
                         std::string text = "Will it happen?") {
  Question q;
  q.id = std::move(id);
  q.text = std::move(text);
  q.open_date = parse_date(open);
  q.close_date = parse_date(close);
  q.answer = answer;
  return q;
}

inline Forecast forecast(std::string qid, std::string who, const char* date, double p, std::string text = "because") {
  Forecast f;
  f.question_id = std::move(qid);
  f.forecaster_id = std::move(who);
  f.date = parse_date(date);
  f.prediction = p;
  f.justification = std::move(text);
  return f;
}

/// Forecast on day `day` of a question opened 2020-01-01.
inline Forecast on_day(std::string qid, std::string who, int day, double p, std::string text = "because") {
  Forecast f = forecast(std::move(qid), std::move(who), "2020-01-01", p, std::move(text));
  f.date += std::chrono::days(day);
  return f;
}

/// Question opened 2020-01-01 and open `life` days.
inline Question with_life(std::string id, int life, std::optional<bool> answer = true,
                          std::string text = "Will it happen?") {
  Question q = question(std::move(id), "2020-01-01", "2020-01-01", answer, std::move(text));
  q.close_date = q.open_date + std::chrono::days(life - 1);
  return q;
}

inline std::string to_jsonl(const Dataset& d) {
  std::ostringstream out;
  serialize(d, out);
  return out.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("crowdcall-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string path(const std::string& name = "") const { return name.empty() ? path_.string() : (path_ / name).string(); }

private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) { write_file(path, text); }

}  // namespace testing_support

#endif  // CROWDCALL_TESTS_SUPPORT_HPP
