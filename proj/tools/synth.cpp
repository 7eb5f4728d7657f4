// Writes a seeded synthetic tranche (questions, outcomes, trial forecasts) plus
// a daily series per dataset question for the tsmodel and simulate commands.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "forecastkit/synthetic.hpp"

namespace {

void write_series(const std::filesystem::path& dir, const fk::ForecastMatrix& m, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::size_t i = 0;
    for (const auto& [id, q] : m.questions()) {
        ++i;
        if (q.kind != fk::QuestionKind::dataset) continue;
        fk::CounterRng rng(seed, 77000000 + i);
        std::ofstream out(dir / (id + ".csv"));
        out << "date,value\n";
        double v = 100.0;
        // three years of daily history ending on the last resolution date
        const fk::Date end = q.resolution_dates.back();
        for (fk::Date d = end - 3 * 365; d <= end; d = d + 1) {
            v += 0.02 + (rng.uniform() - 0.5) + 0.5 * std::sin(6.283185307179586 * d.day_of_year() / 365.0) / 365.0;
            out << d.iso() << ',' << v << '\n';
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forecastkit-synth: write a synthetic benchmark tranche"};
    fk::SyntheticConfig cfg;
    std::string out_dir = "tranche";
    bool series = false;
    app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();
    app.add_option("--market", cfg.market_questions, "market questions")->capture_default_str();
    app.add_option("--dataset", cfg.dataset_questions, "dataset questions")->capture_default_str();
    app.add_option("--horizons", cfg.horizons, "resolution dates per dataset question")->capture_default_str();
    app.add_option("--trials", cfg.trials, "trials per event")->capture_default_str();
    app.add_option("--seed", cfg.seed, "seed")->capture_default_str();
    app.add_flag("--series", series, "also write series/<question_id>.csv");
    CLI11_PARSE(app, argc, argv);

    try {
        const fk::ForecastMatrix m = fk::synthetic_tranche(cfg);
        const std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        std::ofstream q(dir / "questions.jsonl"), o(dir / "outcomes.jsonl"), f(dir / "forecasts.jsonl");
        fk::write_questions(q, m);
        fk::write_outcomes(o, m);
        fk::write_forecasts(f, m);
        if (series) write_series(dir / "series", m, cfg.seed);
        std::cerr << "wrote " << m.questions().size() << " questions, " << m.events().size()
                  << " events, " << m.forecasts().size() << " trial forecasts to " << out_dir << '\n';
    } catch (const fk::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == fk::ErrorKind::numerical ? 2 : 1;
    }
    return 0;
}
