#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <vector>

#include "soul/errors.hpp"
#include "soul/linalg.hpp"
#include "soul/memory.hpp"
#include "soul/rng.hpp"

using soul::memory::BufferMemory;
using soul::memory::MemoryEntry;

namespace {

std::vector<MemoryEntry> make_entries(std::size_t n_benign, std::size_t n_attack,
                                      int task_id, soul::rng::Engine& rng) {
  std::vector<MemoryEntry> out;
  for (std::size_t i = 0; i < n_benign + n_attack; ++i) {
    MemoryEntry e;
    e.features = {rng.uniform(), rng.uniform(), rng.uniform()};
    e.label = i < n_benign ? 0 : 1;
    e.task_id = task_id;
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t count_label(const BufferMemory& mem, int label) {
  std::size_t n = 0;
  for (const auto& e : mem.entries()) n += e.label == label ? 1 : 0;
  return n;
}

std::size_t count_task(const BufferMemory& mem, int task_id) {
  std::size_t n = 0;
  for (const auto& e : mem.entries()) n += e.task_id == task_id ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("small task fits entirely") {
  soul::rng::Engine rng(1);
  BufferMemory mem(100, 42);
  mem.reorganize(make_entries(6, 4, 1, rng), 1);
  CHECK(mem.size() == 10);
}

TEST_CASE("abundant classes split the capacity evenly") {
  soul::rng::Engine rng(2);
  BufferMemory mem(10, 42);
  mem.reorganize(make_entries(100, 100, 1, rng), 1);
  CHECK(mem.size() == 10);
  CHECK(count_label(mem, 0) == 5);
  CHECK(count_label(mem, 1) == 5);
}

TEST_CASE("per-task quota respected across three tasks") {
  soul::rng::Engine rng(3);
  BufferMemory mem(30, 42, 1.0 / 3.0);
  for (int t = 1; t <= 3; ++t) mem.reorganize(make_entries(50, 50, t, rng), t);
  CHECK(mem.size() <= 30);
  for (int t = 1; t <= 3; ++t) CHECK(count_task(mem, t) >= 10);  // floor(30/3)
}

TEST_CASE("underfilled class cedes slots to the other") {
  soul::rng::Engine rng(4);
  BufferMemory mem(20, 42);
  mem.reorganize(make_entries(100, 3, 1, rng), 1);  // only 3 attacks exist
  CHECK(mem.size() == 20);
  CHECK(count_label(mem, 1) == 3);
  CHECK(count_label(mem, 0) == 17);
}

TEST_CASE("sampling without replacement and edge sizes") {
  soul::rng::Engine rng(5);
  BufferMemory mem(50, 42);
  mem.reorganize(make_entries(5, 5, 1, rng), 1);

  soul::rng::Engine draw(6);
  CHECK(mem.sample_batch(0, draw).empty());

  const auto all = mem.sample_batch(mem.size(), draw);
  CHECK(all.size() == mem.size());
  // a permutation: every stored feature vector appears exactly once
  for (const auto& e : mem.entries()) {
    const auto hits = std::count_if(all.begin(), all.end(), [&](const auto& s) {
      return s.features == e.features;
    });
    CHECK(hits == 1);
  }

  BufferMemory empty(10, 42);
  CHECK_THROWS_AS(empty.sample_batch(1, draw), soul::EmptyMemory);
}

TEST_CASE("single draws are uniform over a two-entry memory") {
  BufferMemory mem(4, 42);
  std::vector<MemoryEntry> two = {{{1.0, 0.0}, 0, 1}, {{0.0, 1.0}, 1, 1}};
  mem.reorganize(two, 1);
  REQUIRE(mem.size() == 2);

  soul::rng::Engine draw(7);
  std::size_t first = 0;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    if (mem.sample_batch(1, draw).front().label == 0) ++first;
  }
  const double freq = static_cast<double>(first) / static_cast<double>(n);
  CHECK(freq > 0.48);
  CHECK(freq < 0.52);
}

TEST_CASE("vote neighbors match a brute-force cosine scan") {
  soul::rng::Engine rng(8);
  BufferMemory mem(200, 42);
  std::vector<MemoryEntry> entries;
  for (int i = 0; i < 100; ++i) {
    MemoryEntry e;
    e.features = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    e.label = i % 2;
    e.task_id = 1;
    entries.push_back(std::move(e));
  }
  mem.reorganize(entries, 1);

  const std::vector<double> x{0.3, -0.7, 0.2, 0.9};
  for (const double c_d : {0.05, 0.3, 1.0, 2.0}) {
    const auto got = mem.vote_neighbors(x, c_d);
    std::size_t expected = 0;
    for (const auto& e : mem.entries()) {
      if (soul::linalg::cosine_distance(x, e.features) < c_d) ++expected;
    }
    CHECK(got.size() == expected);
    for (const auto& n : got) CHECK(n.distance < c_d);
  }

  // query identical to a stored sample is its own neighbor at distance 0
  const auto& stored = mem.entries().front();
  const auto hits = mem.vote_neighbors(stored.features, 0.1);
  CHECK(std::any_of(hits.begin(), hits.end(),
                    [](const auto& n) { return n.distance <= 1e-12; }));

  CHECK_THROWS_AS(mem.vote_neighbors(x, 0.0), soul::SpecError);
  CHECK_THROWS_AS(mem.vote_neighbors(x, 2.5), soul::SpecError);
}

TEST_CASE("zero-norm entries never vote") {
  BufferMemory mem(10, 42);
  std::vector<MemoryEntry> entries = {{{0.0, 0.0}, 0, 1}, {{1.0, 1.0}, 1, 1}};
  mem.reorganize(entries, 1);
  const auto got = mem.vote_neighbors(std::vector<double>{1.0, 1.0}, 2.0);
  CHECK(got.size() == 1);
  CHECK(got.front().label == 1);
}

TEST_CASE("capacity holds under random operation sequences") {
  soul::rng::Engine rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t cap = 5 + rng.below(40);
    BufferMemory mem(cap, 100 + trial);
    for (int t = 1; t <= 8; ++t) {
      const auto nb = rng.below(60);
      const auto na = rng.below(60);
      if (nb + na == 0) continue;
      mem.reorganize(make_entries(nb, na, t, rng), t);
      CHECK(mem.size() <= cap);
      // balanced halves whenever both classes were abundant in this step
      if (nb >= cap && na >= cap) {
        const auto b = count_label(mem, 0);
        const auto a = count_label(mem, 1);
        CHECK((b > a ? b - a : a - b) <= 1);
      }
    }
  }
}

TEST_CASE("csv dump writes one line per entry") {
  soul::rng::Engine rng(10);
  BufferMemory mem(10, 42);
  mem.reorganize(make_entries(2, 2, 1, rng), 1);
  const std::string path = "memory_dump_test.csv";
  mem.dump_csv(path);
  std::FILE* f = std::fopen(path.c_str(), "r");
  REQUIRE(f != nullptr);
  std::size_t lines = 0;
  for (int c = std::fgetc(f); c != EOF; c = std::fgetc(f)) {
    if (c == '\n') ++lines;
  }
  std::fclose(f);
  std::remove(path.c_str());
  CHECK(lines == mem.size() + 1);  // header + entries
}
