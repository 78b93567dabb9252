#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "prime/data.hpp"
#include "prime/rng.hpp"

using namespace prime;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

Series single_feature_series(const std::vector<double>& times, const std::vector<double>& mask,
                             const std::vector<double>& vals = {}) {
  Series s;
  s.id = "s";
  s.T = times.size();
  s.timestamps = Tensor({s.T, 1});
  s.mask = Tensor({s.T, 1});
  s.values = Tensor({s.T, 1});
  for (std::size_t t = 0; t < s.T; ++t) {
    s.timestamps(t, 0) = times[t];
    s.mask(t, 0) = mask[t];
    s.values(t, 0) = vals.empty() ? 0.0 : vals[t];
  }
  return s;
}

}  // namespace

TEST_CASE("time gaps accumulate across missing steps") {
  SUBCASE("reference sequence") {
    Series s = single_feature_series({0, 2, 3, 6, 10}, {1, 0, 0, 1, 1});
    Tensor d = compute_time_gaps(s);
    CHECK(d(0, 0) == 0.0);
    CHECK(d(1, 0) == 2.0);
    CHECK(d(2, 0) == 3.0);
    CHECK(d(3, 0) == 6.0);
    CHECK(d(4, 0) == 4.0);
  }
  SUBCASE("fully observed uniform spacing equals inter-arrival times") {
    Series s = single_feature_series({0, 1, 2, 3, 4}, {1, 1, 1, 1, 1});
    Tensor d = compute_time_gaps(s);
    CHECK(d(0, 0) == 0.0);
    for (std::size_t t = 1; t < 5; ++t) CHECK(d(t, 0) == 1.0);
  }
  SUBCASE("everything missing after the first step unrolls to elapsed time") {
    Series s = single_feature_series({0, 1, 2, 3}, {1, 0, 0, 0});
    Tensor d = compute_time_gaps(s);
    CHECK(d(0, 0) == 0.0);
    CHECK(d(1, 0) == 1.0);
    CHECK(d(2, 0) == 2.0);
    CHECK(d(3, 0) == 3.0);
  }
  SUBCASE("random all-observed series reproduces raw gaps") {
    Rng rng(4);
    std::vector<double> times(8);
    double acc = 0.0;
    for (auto& t : times) {
      acc += rng.uniform(0.1, 2.0);
      t = acc;
    }
    Series s = single_feature_series(times, std::vector<double>(8, 1.0));
    Tensor d = compute_time_gaps(s);
    for (std::size_t t = 1; t < 8; ++t) {
      CHECK(d(t, 0) == doctest::Approx(times[t] - times[t - 1]).epsilon(1e-12));
    }
  }
  SUBCASE("decreasing timestamps are rejected") {
    Series s = single_feature_series({0, 2, 1}, {1, 1, 1});
    CHECK_THROWS_AS(compute_time_gaps(s), std::runtime_error);
  }
}

TEST_CASE("event file parsing") {
  SUBCASE("two rows, two steps, two variables") {
    std::string path = temp_path("prime_parse_basic.csv");
    write_file(path, "series_id,timestamp,variable,value\nA,0,v0,1.5\nA,2,v1,3.0\n");
    SeriesSet set = parse_events(path);
    REQUIRE(set.series.size() == 1);
    REQUIRE(set.feature_names.size() == 2);
    const Series& s = set.series[0];
    CHECK(s.T == 2);
    CHECK(s.mask(0, 0) == 1.0);
    CHECK(s.mask(0, 1) == 0.0);
    CHECK(s.mask(1, 0) == 0.0);
    CHECK(s.mask(1, 1) == 1.0);
    CHECK(s.values(0, 0) == 1.5);
    CHECK(s.values(1, 1) == 3.0);
    CHECK(s.timestamps(1, 0) == 2.0);
  }
  SUBCASE("empty file yields an empty set") {
    std::string path = temp_path("prime_parse_empty.csv");
    write_file(path, "");
    SeriesSet set = parse_events(path);
    CHECK(set.series.empty());
    write_file(path, "series_id,timestamp,variable,value\n");
    set = parse_events(path);
    CHECK(set.series.empty());
  }
  SUBCASE("non-numeric value names the line") {
    std::string path = temp_path("prime_parse_bad.csv");
    write_file(path, "series_id,timestamp,variable,value\nA,0,v0,1.5\nA,1,v0,oops\n");
    CHECK_THROWS_WITH_AS(parse_events(path), doctest::Contains("line 3"), std::runtime_error);
  }
  SUBCASE("wrong arity names the line") {
    std::string path = temp_path("prime_parse_arity.csv");
    write_file(path, "series_id,timestamp,variable,value\nA,0,v0\n");
    CHECK_THROWS_WITH_AS(parse_events(path), doctest::Contains("line 2"), std::runtime_error);
  }
  SUBCASE("duplicate entries resolve last-wins with a counter") {
    std::string path = temp_path("prime_parse_dup.csv");
    write_file(path,
               "series_id,timestamp,variable,value\nA,0,v0,1.0\nA,0,v0,2.0\nA,1,v0,5.0\n");
    std::size_t dups = 0;
    SeriesSet set = parse_events(path, {}, &dups);
    CHECK(dups == 1);
    CHECK(set.series[0].values(0, 0) == 2.0);
  }
  SUBCASE("declared variable order wins over occurrence order") {
    std::string path = temp_path("prime_parse_decl.csv");
    write_file(path, "series_id,timestamp,variable,value\nA,0,v1,1.0\nA,0,v0,2.0\n");
    SeriesSet set = parse_events(path, {"v0", "v1"});
    CHECK(set.feature_names[0] == "v0");
    CHECK(set.series[0].values(0, 0) == 2.0);
    CHECK(set.series[0].values(0, 1) == 1.0);
    CHECK_THROWS_WITH_AS(parse_events(path, {"v0"}), doctest::Contains("unknown variable"),
                         std::runtime_error);
  }
  SUBCASE("steps sort by timestamp regardless of row order") {
    std::string path = temp_path("prime_parse_sort.csv");
    write_file(path, "series_id,timestamp,variable,value\nA,5,v0,2.0\nA,1,v0,1.0\n");
    SeriesSet set = parse_events(path);
    CHECK(set.series[0].timestamps(0, 0) == 1.0);
    CHECK(set.series[0].values(0, 0) == 1.0);
  }
}

TEST_CASE("normalization") {
  SUBCASE("two observations standardize to plus and minus one") {
    SeriesSet set;
    set.feature_names = {"f"};
    set.series.push_back(single_feature_series({0, 1}, {1, 1}, {1.0, 3.0}));
    NormStats stats = normalize(set);
    CHECK(stats.mean[0] == doctest::Approx(2.0));
    CHECK(stats.stddev[0] == doctest::Approx(1.0));  // population std
    CHECK(set.series[0].values(0, 0) == doctest::Approx(-1.0));
    CHECK(set.series[0].values(1, 0) == doctest::Approx(1.0));
  }
  SUBCASE("constant feature floors the divisor") {
    SeriesSet set;
    set.feature_names = {"f"};
    set.series.push_back(single_feature_series({0, 1, 2}, {1, 1, 1}, {5.0, 5.0, 5.0}));
    normalize(set);
    for (std::size_t t = 0; t < 3; ++t) CHECK(set.series[0].values(t, 0) == 0.0);
  }
  SUBCASE("standardized data is a fixed point") {
    SeriesSet set;
    set.feature_names = {"f"};
    set.series.push_back(single_feature_series({0, 1}, {1, 1}, {-1.0, 1.0}));
    normalize(set);
    CHECK(set.series[0].values(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(set.series[0].values(1, 0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("unobserved feature is an error naming it") {
    SeriesSet set;
    set.feature_names = {"f", "ghost"};
    Series s;
    s.id = "a";
    s.T = 1;
    s.timestamps = Tensor({1, 2});
    s.values = Tensor({1, 2});
    s.mask = Tensor({1, 2});
    s.mask(0, 0) = 1.0;
    s.values(0, 0) = 2.0;
    set.series.push_back(s);
    CHECK_THROWS_WITH_AS(normalize(set), doctest::Contains("ghost"), std::runtime_error);
  }
  SUBCASE("normalize then denormalize recovers observed values") {
    Rng rng(12);
    SynthConfig cfg;
    cfg.n_series = 6;
    cfg.seed = 77;
    SeriesSet set = synth_generate(cfg);
    SeriesSet original = set;
    NormStats stats = normalize(set);
    denormalize(set, stats);
    for (std::size_t si = 0; si < set.series.size(); ++si) {
      for (std::size_t i = 0; i < set.series[si].values.numel(); ++i) {
        if (original.series[si].mask[i] > 0.5) {
          CHECK(set.series[si].values[i] ==
                doctest::Approx(original.series[si].values[i]).epsilon(1e-6));
        }
      }
    }
  }
}

TEST_CASE("hold-out masking") {
  SynthConfig cfg;
  cfg.n_series = 10;
  cfg.t_min = 12;
  cfg.t_max = 20;
  cfg.obs_rate = 0.6;
  cfg.seed = 5;
  SeriesSet set = synth_generate(cfg);
  std::size_t observed = set.total_observed();
  REQUIRE(observed > 100);

  SUBCASE("cardinality is exactly floor(rate * observed)") {
    EvalSplit split = holdout_mask(set, 0.1, 3);
    CHECK(split.total_held_out() == observed / 10);
  }
  SUBCASE("same seed reproduces the mask, different seeds diverge") {
    EvalSplit a = holdout_mask(set, 0.1, 3);
    EvalSplit b = holdout_mask(set, 0.1, 3);
    EvalSplit c = holdout_mask(set, 0.1, 4);
    bool same_ab = true, same_ac = true;
    for (std::size_t si = 0; si < a.eval_mask.size(); ++si) {
      for (std::size_t i = 0; i < a.eval_mask[si].numel(); ++i) {
        same_ab = same_ab && a.eval_mask[si][i] == b.eval_mask[si][i];
        same_ac = same_ac && a.eval_mask[si][i] == c.eval_mask[si][i];
      }
    }
    CHECK(same_ab);
    CHECK(!same_ac);
  }
  SUBCASE("only observed entries are ever held out") {
    EvalSplit split = holdout_mask(set, 0.2, 9);
    for (std::size_t si = 0; si < set.series.size(); ++si) {
      for (std::size_t i = 0; i < set.series[si].mask.numel(); ++i) {
        if (split.eval_mask[si][i] > 0.5) CHECK(set.series[si].mask[i] == 1.0);
      }
    }
  }
  SUBCASE("blinding zeroes exactly the held-out entries") {
    EvalSplit split = holdout_mask(set, 0.2, 9);
    SeriesSet blinded = blind(set, split);
    for (std::size_t si = 0; si < set.series.size(); ++si) {
      for (std::size_t i = 0; i < set.series[si].mask.numel(); ++i) {
        bool held = split.eval_mask[si][i] > 0.5;
        CHECK(blinded.series[si].mask[i] == (held ? 0.0 : set.series[si].mask[i]));
      }
    }
  }
  SUBCASE("a series is never fully blinded") {
    SeriesSet tiny;
    tiny.feature_names = {"f"};
    tiny.series.push_back(single_feature_series({0.0}, {1.0}, {2.0}));
    tiny.series.push_back(single_feature_series({0, 1, 2, 3, 4, 5, 6, 7, 8, 9},
                                                std::vector<double>(10, 1.0),
                                                std::vector<double>(10, 1.0)));
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      EvalSplit split = holdout_mask(tiny, 0.5, seed);
      SeriesSet blinded = blind(tiny, split);
      for (const Series& s : blinded.series) {
        double visible = 0.0;
        for (std::size_t i = 0; i < s.mask.numel(); ++i) visible += s.mask[i];
        CHECK(visible >= 1.0);
      }
    }
  }
  SUBCASE("rate outside (0,1) is rejected") {
    CHECK_THROWS_AS(holdout_mask(set, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(holdout_mask(set, 1.0, 1), std::invalid_argument);
  }
}

TEST_CASE("synthetic generator") {
  SUBCASE("full observation rate leaves no gaps") {
    SynthConfig cfg;
    cfg.n_series = 3;
    cfg.obs_rate = 1.0;
    cfg.seed = 2;
    SeriesSet set = synth_generate(cfg);
    for (const Series& s : set.series) {
      for (std::size_t i = 0; i < s.mask.numel(); ++i) CHECK(s.mask[i] == 1.0);
    }
  }
  SUBCASE("zero series yields an empty set") {
    SynthConfig cfg;
    cfg.n_series = 0;
    CHECK(synth_generate(cfg).series.empty());
  }
  SUBCASE("same seed is bit-identical, different seed differs") {
    SynthConfig cfg;
    cfg.n_series = 5;
    cfg.seed = 11;
    SeriesSet a = synth_generate(cfg);
    SeriesSet b = synth_generate(cfg);
    REQUIRE(a.series.size() == b.series.size());
    for (std::size_t si = 0; si < a.series.size(); ++si) {
      REQUIRE(a.series[si].T == b.series[si].T);
      for (std::size_t i = 0; i < a.series[si].values.numel(); ++i) {
        CHECK(a.series[si].values[i] == b.series[si].values[i]);
        CHECK(a.series[si].mask[i] == b.series[si].mask[i]);
        CHECK(a.series[si].timestamps[i] == b.series[si].timestamps[i]);
      }
    }
    cfg.seed = 12;
    SeriesSet c = synth_generate(cfg);
    bool identical = true;
    for (std::size_t si = 0; si < a.series.size() && identical; ++si) {
      identical = a.series[si].T == c.series[si].T;
      if (identical) {
        for (std::size_t i = 0; i < a.series[si].values.numel(); ++i) {
          identical = identical && a.series[si].values[i] == c.series[si].values[i];
        }
      }
    }
    CHECK(!identical);
  }
  SUBCASE("event file round trip preserves the set") {
    SynthConfig cfg;
    cfg.n_series = 4;
    cfg.obs_rate = 0.4;
    cfg.seed = 21;
    SeriesSet set = synth_generate(cfg);
    std::string path = temp_path("prime_synth_roundtrip.csv");
    write_events_csv(set, path);
    SeriesSet back = parse_events(path, set.feature_names);
    REQUIRE(back.series.size() == set.series.size());
    for (std::size_t si = 0; si < set.series.size(); ++si) {
      REQUIRE(back.series[si].T == set.series[si].T);
      for (std::size_t i = 0; i < set.series[si].values.numel(); ++i) {
        CHECK(back.series[si].mask[i] == set.series[si].mask[i]);
        if (set.series[si].mask[i] > 0.5) {
          CHECK(back.series[si].values[i] == set.series[si].values[i]);
          CHECK(back.series[si].timestamps[i] == set.series[si].timestamps[i]);
        }
      }
    }
  }
}

TEST_CASE("series split is seeded 8:1:1 with nonempty parts") {
  SplitIndices s = split_series(64, 9);
  CHECK(s.train.size() == 52);
  CHECK(s.val.size() == 6);
  CHECK(s.test.size() == 6);
  std::vector<bool> seen(64, false);
  for (auto grp : {&s.train, &s.val, &s.test}) {
    for (std::size_t i : *grp) {
      CHECK(!seen[i]);
      seen[i] = true;
    }
  }
  SplitIndices t = split_series(64, 9);
  CHECK(t.train == s.train);
  SplitIndices u = split_series(4, 1);
  CHECK(u.train.size() == 2);
  CHECK(u.val.size() == 1);
  CHECK(u.test.size() == 1);
}
