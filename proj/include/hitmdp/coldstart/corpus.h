#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hitmdp::coldstart {

// Token ids: numbers 0..31 are single tokens, followed by '+', '=', ';' and
// the end-of-sequence marker.
struct Vocab {
  static constexpr int kNumbers = 32;
  static constexpr int kPlus = 32;
  static constexpr int kEquals = 33;
  static constexpr int kSep = 34;
  static constexpr int kEos = 35;
  static constexpr int kSize = 36;

  static std::string to_string(int id);
  static int from_string(const std::string& token);  // throws on unknown tokens
  static std::string join(const std::vector<int>& ids);
  static std::vector<int> split(const std::string& text);
};

struct ReasoningSample {
  std::vector<int> prompt;
  std::vector<int> cot;
  std::vector<int> answer;

  bool operator==(const ReasoningSample&) const = default;
  void validate(int vocab_size) const;
};

// Copy: prompt "x y z =", answer "x y z", where the k-th payload number is
// drawn from [10k, 10k + 9]. Add2: "a + b =", cot "a + b = s", answer "s".
// Add3: "a + b + c =", cot "a + b = s ; s + c = t", answer "t". Sums stay
// below 32.
enum class Task { Copy, Add2, Add3 };

Task task_from_string(const std::string& s);
std::string to_string(Task t);

// Seeded; distinct samples until the task's pool of problems is exhausted.
std::vector<ReasoningSample> make_synthetic_corpus(Task task, int n, std::uint64_t seed);
// Problems not in `taken`, in seeded order.
std::vector<ReasoningSample> held_out_samples(Task task, const std::vector<ReasoningSample>& taken,
                                              int n, std::uint64_t seed);

// One sample per line: prompt, cot, answer separated by tabs, tokens by spaces.
void write_corpus(const std::string& path, const std::vector<ReasoningSample>& samples);
std::vector<ReasoningSample> read_corpus(const std::string& path);

}  // namespace hitmdp::coldstart
