// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <set>

#include "rob/core/rng.hpp"
#include "rob/core/serialize.hpp"
#include "rob/core/tensor.hpp"
#include "rob/train/schedule.hpp"

using namespace rob;

TEST_CASE("tensor shape and storage") {
  Tensor t({2, 3});
  REQUIRE(t.size() == 6);
  REQUIRE(t.dim(0) == 2);
  REQUIRE(t.dim(1) == 3);
  t.at2(1, 2) = 5.0;
  REQUIRE(t[5] == 5.0);
  Tensor u = Tensor::full({2, 3}, 1.5);
  REQUIRE(u[0] == 1.5);
  REQUIRE(t.same_shape(u));
  Tensor s = Tensor::scalar(2.0);
  REQUIRE(s.size() == 1);
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());

  // Derived streams: same tags agree, different tags differ.
  Rng d1 = Rng::derive(7, std::uint64_t(1), std::uint64_t(2));
  Rng d2 = Rng::derive(7, std::uint64_t(1), std::uint64_t(2));
  Rng d3 = Rng::derive(7, std::uint64_t(1), std::uint64_t(3));
  REQUIRE(d1.uniform() == d2.uniform());
  REQUIRE(d1.uniform() != d3.uniform());
}

TEST_CASE("rng helpers respect contracts") {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    auto idx = rng.sample_without_replacement(20, 8);
    REQUIRE(idx.size() == 8);
    REQUIRE(std::is_sorted(idx.begin(), idx.end()));
    std::set<std::size_t> uniq(idx.begin(), idx.end());
    REQUIRE(uniq.size() == 8);
    for (auto i : idx) REQUIRE(i < 20);
  }
  for (int rep = 0; rep < 2000; ++rep) {
    const real v = rng.trunc_normal(0.02);
    REQUIRE(std::abs(v) <= 0.04 + 1e-12);
  }
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = rng.uniform_index(7);
    REQUIRE(k < 7);
  }
}

TEST_CASE("rng state serialization resumes the stream exactly") {
  Rng a(99);
  for (int i = 0; i < 17; ++i) a.uniform();
  const std::string state = a.serialize_state();
  Rng b(0);
  b.deserialize_state(state);
  for (int i = 0; i < 50; ++i) REQUIRE(a.normal(0.0, 1.0) == b.normal(0.0, 1.0));
}

TEST_CASE("fnv1a checksum is order and shape sensitive") {
  Fnv1a h1, h2;
  Tensor a = Tensor::full({2, 3}, 1.0);
  Tensor b = Tensor::full({3, 2}, 1.0);
  h1.update(a);
  h2.update(b);
  REQUIRE(h1.digest() != h2.digest());  // same bytes, different shape

  Fnv1a h3, h4;
  h3.update(std::string("ab"));
  h4.update(std::string("ba"));
  REQUIRE(h3.digest() != h4.digest());
}

TEST_CASE("binary tensor io round-trips bit-exactly") {
  Tensor t({3, 4});
  Rng rng(5);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, 1.0);
  const std::string path = "io_roundtrip.bin";
  {
    std::ofstream os(path, std::ios::binary);
    io::write_u64(os, 77);
    io::write_string(os, "hello");
    io::write_tensor(os, t);
  }
  {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(io::read_u64(is) == 77);
    REQUIRE(io::read_string(is) == "hello");
    Tensor u = io::read_tensor(is);
    REQUIRE(u.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(u[i] == t[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("schedule reproduces the contract examples") {
  // Cosine with 100 warmup steps, peak 2e-3: exact peak at step 100, 0 at step 0.
  auto lr = ScheduleSpec::cosine(2e-3, 1e-5, 1000, 100, 0.0);
  REQUIRE(std::abs(schedule_value(lr, 100) - 2e-3) < 1e-12);
  REQUIRE(schedule_value(lr, 0) == 0.0);

  // Increasing ramp 0.04 -> 0.4 over 1000 steps: ~0.4 at the last step.
  auto wd = ScheduleSpec::cosine(0.04, 0.4, 1000, 0, 0.04);
  REQUIRE(std::abs(schedule_value(wd, 999) - 0.4) < 1e-6);
  REQUIRE(std::abs(schedule_value(wd, 0) - 0.04) < 1e-12);

  auto c = ScheduleSpec::constant_of(0.3, 10);
  REQUIRE(schedule_value(c, 0) == 0.3);
  REQUIRE(schedule_value(c, 9) == 0.3);
}

TEST_CASE("schedule properties") {
  auto lr = ScheduleSpec::cosine(1e-2, 1e-4, 500, 50, 0.0);
  // Monotone decay after warmup.
  real prev = schedule_value(lr, 50);
  for (std::size_t s = 51; s < 500; ++s) {
    const real v = schedule_value(lr, s);
    REQUIRE(v <= prev + 1e-15);
    REQUIRE(v >= 1e-4 - 1e-15);
    prev = v;
  }
  // Monotone increase during warmup.
  for (std::size_t s = 1; s <= 50; ++s)
    REQUIRE(schedule_value(lr, s) >= schedule_value(lr, s - 1));
  // Out-of-range step is an error.
  REQUIRE_THROWS(schedule_value(lr, 500));
  // JSON round-trip.
  nlohmann::json j = lr;
  ScheduleSpec back = j.get<ScheduleSpec>();
  REQUIRE(back.peak_value == lr.peak_value);
  REQUIRE(back.warmup_steps == lr.warmup_steps);
  REQUIRE(schedule_value(back, 123) == schedule_value(lr, 123));
}
