// fasucm: command-line front end for the per-subject anti-spoofing pipeline.
//
// exit codes: 0 ok, 2 bad arguments or configuration, 3 missing prerequisite,
// 4 anything else that failed at run time.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fasucm/classifier/subject.hpp"
#include "fasucm/fixture/fixture.hpp"
#include "fasucm/pipeline/stages.hpp"

namespace fs = std::filesystem;
using namespace fasucm;

namespace {

constexpr int exit_validation = 2;
constexpr int exit_prerequisite = 3;
constexpr int exit_runtime = 4;

std::vector<std::string> subjects_arg(const dataset::DatasetManifest& m, const std::string& subject) {
	if (subject == "all") return m.subjects();
	const auto all = m.subjects();
	if (std::find(all.begin(), all.end(), subject) == all.end())
		throw ConfigError("subject '" + subject + "' is not in the manifest");
	return {subject};
}

perceptual::FeatureExtractor<float> open_weights(const std::string& w, const fs::path& scratch) {
	if (w.empty()) throw ConfigError("--weights is required (a weights manifest or random:<seed>)");
	if (w.rfind("random:", 0) == 0) {
		const auto seed = text::parse_int<std::uint64_t>(w.substr(7));
		if (!seed) throw ConfigError("--weights: expected random:<seed>, got '" + w + "'");
		return perceptual::load_backbone<float>(perceptual::write_random_weights(scratch, *seed));
	}
	return perceptual::load_backbone<float>(w);
}

// A bank directory written by `bank`, or a folder of loose style models
// written by `style-train`.
synth::StyleBank open_bank(const fs::path& dir) {
	if (fs::exists(dir / synth::bank_file)) return synth::load_style_bank(dir);
	if (!fs::is_directory(dir)) throw ConfigError("style bank directory not found: " + dir.string());
	synth::StyleBank bank;
	bank.source_subject = "";
	std::vector<fs::path> sidecars;
	for (const auto& e : fs::directory_iterator(dir))
		if (e.path().extension() == ".json" && fs::exists(fs::path(e.path()).replace_extension(".fta")))
			sidecars.push_back(e.path());
	std::sort(sidecars.begin(), sidecars.end());
	for (const auto& s : sidecars) bank.styles.push_back({{}, style::load_style_model(s)});
	if (bank.styles.empty()) throw ConfigError("no style models in " + dir.string());
	return bank;
}

std::vector<fs::path> images_in(const fs::path& p) {
	if (fs::is_regular_file(p)) return {p};
	if (!fs::is_directory(p)) throw ConfigError("input not found: " + p.string());
	std::vector<fs::path> out;
	for (const auto& e : fs::recursive_directory_iterator(p))
		if (e.is_regular_file() && dataset::is_image_file(e.path())) out.push_back(e.path());
	std::sort(out.begin(), out.end());
	return out;
}

log::Level parse_level(const std::string& s) {
	if (s == "debug") return log::Level::debug;
	if (s == "info") return log::Level::info;
	if (s == "warn") return log::Level::warn;
	if (s == "error") return log::Level::error;
	if (s == "off") return log::Level::off;
	throw ConfigError("unknown log level '" + s + "'");
}

} // namespace

int main(int argc, char** argv) {
	CLI::App app{"fasucm - user-centred face anti-spoofing pipeline"};
	app.require_subcommand(1);
	std::string level = "info";
	std::size_t jobs = 1;
	app.add_option("--log-level", level, "debug, info, warn, error or off")->capture_default_str();
	app.add_option("-j,--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);

	std::function<void()> action;

	// ingest
	fs::path ingest_src, ingest_out;
	dataset::CropSpec crop;
	std::size_t ingest_stride = 1;
	std::uint64_t ingest_seed = 0;
	auto* ingest = app.add_subcommand("ingest", "harvest face crops and write manifest.json");
	ingest->add_option("--src", ingest_src, "source tree")->required();
	ingest->add_option("--out", ingest_out, "crop tree")->required();
	ingest->add_option("--size", crop.output_size, "crop side in pixels")->capture_default_str();
	ingest->add_option("--margin", crop.margin, "margin around the face box")->capture_default_str();
	ingest->add_option("--stride", ingest_stride, "keep every Nth frame")->capture_default_str();
	ingest->add_option("--detector", crop.detector, "full-frame, foreground or cascade:<xml>")->capture_default_str();
	ingest->add_option("--seed", ingest_seed, "seed stored in the manifest")->capture_default_str();
	ingest->callback([&] {
		action = [&] {
			fs::remove_all(ingest_out);
			const auto st = dataset::ingest(ingest_src, ingest_out, crop, ingest_stride);
			auto m = dataset::build_manifest(ingest_out, ingest_seed);
			m.root = fs::absolute(ingest_out);
			dataset::save_manifest(m, ingest_out / "manifest.json");
			std::cout << st.videos << " videos, " << st.frames << " frames, " << st.crops << " crops, " << st.skipped
			          << " skipped\n";
		};
	});

	// split
	fs::path split_manifest, split_out;
	double train_frac = 0.7;
	std::uint64_t split_seed = 0;
	auto* split = app.add_subcommand("split", "video-disjoint train/test split");
	split->add_option("--manifest", split_manifest)->required();
	split->add_option("--train-frac", train_frac)->capture_default_str();
	split->add_option("--seed", split_seed)->capture_default_str();
	split->add_option("--out", split_out, "defaults to split.json next to the manifest");
	split->callback([&] {
		action = [&] {
			std::vector<std::string> warnings;
			const auto m = dataset::split_holdout(dataset::load_manifest(split_manifest), train_frac, split_seed, &warnings);
			for (const auto& w : warnings) log::warn(w);
			const auto out = split_out.empty() ? split_manifest.parent_path() / "split.json" : split_out;
			dataset::save_manifest(m, out);
			std::cout << "wrote " << out.string() << '\n';
		};
	});

	// style-train
	fs::path st_ref, st_corpus, st_out;
	std::string st_id, st_weights;
	style::StyleTrainConfig st_cfg;
	style::LossWeights st_w;
	std::size_t st_limit = 0;
	auto* style_train = app.add_subcommand("style-train", "train one feed-forward style model");
	style_train->add_option("--ref", st_ref, "style reference image")->required();
	style_train->add_option("--style-id", st_id, "<attack>.<tag>, e.g. print.a")->required();
	style_train->add_option("--corpus", st_corpus, "manifest whose live non-test frames form the corpus")->required();
	style_train->add_option("--out", st_out, "model directory")->required();
	style_train->add_option("--weights", st_weights, "perceptual weights manifest or random:<seed>")->required();
	style_train->add_option("--iters", st_cfg.iterations)->capture_default_str();
	style_train->add_option("--lr", st_cfg.learning_rate)->capture_default_str();
	style_train->add_option("--seed", st_cfg.seed)->capture_default_str();
	style_train->add_option("--image-size", st_cfg.image_size)->capture_default_str();
	style_train->add_option("--batch", st_cfg.batch_size)->capture_default_str();
	style_train->add_option("--base-channels", st_cfg.net.base_channels)->capture_default_str();
	style_train->add_option("--residual-blocks", st_cfg.net.residual_blocks)->capture_default_str();
	style_train->add_option("--content-weight", st_w.content)->capture_default_str();
	style_train->add_option("--style-weight", st_w.style)->capture_default_str();
	style_train->add_option("--tv-weight", st_w.tv)->capture_default_str();
	style_train->add_option("--corpus-limit", st_limit, "0 keeps every frame")->capture_default_str();
	style_train->callback([&] {
		action = [&] {
			const auto dot = st_id.find('.');
			const auto attack = dataset::parse_attack_type(st_id.substr(0, dot));
			const auto fx = open_weights(st_weights, st_out / "weights");
			const auto corpus = synth::style_corpus(dataset::load_manifest(st_corpus), st_limit, st_cfg.seed);
			const style::StyleReference ref{st_id, load_image(st_ref), dataset::to_string(attack)};
			const auto model = style::train_style_model(ref, corpus, st_w, st_cfg, fx);
			std::cout << "wrote " << style::save_style_model(model, st_out).string() << '\n';
		};
	});

	// bank
	fs::path bank_manifest, bank_out;
	std::string bank_subject = "random", bank_weights;
	std::uint64_t bank_seed = 0;
	synth::BankSettings bank_settings;
	auto* bank = app.add_subcommand("bank", "train one style model per spoof style of a reference subject");
	bank->add_option("--manifest", bank_manifest, "split manifest")->required();
	bank->add_option("--out", bank_out)->required();
	bank->add_option("--weights", bank_weights, "perceptual weights manifest or random:<seed>")->required();
	bank->add_option("--subject", bank_subject, "reference subject or random")->capture_default_str();
	bank->add_option("--seed", bank_seed)->capture_default_str();
	bank->add_option("--iters", bank_settings.train.iterations)->capture_default_str();
	bank->add_option("--lr", bank_settings.train.learning_rate)->capture_default_str();
	bank->add_option("--image-size", bank_settings.train.image_size)->capture_default_str();
	bank->add_option("--batch", bank_settings.train.batch_size)->capture_default_str();
	bank->add_option("--base-channels", bank_settings.train.net.base_channels)->capture_default_str();
	bank->add_option("--residual-blocks", bank_settings.train.net.residual_blocks)->capture_default_str();
	bank->add_option("--style-weight", bank_settings.weights.style)->capture_default_str();
	bank->add_option("--corpus-limit", bank_settings.corpus_limit)->capture_default_str();
	bank->callback([&] {
		action = [&] {
			const auto fx = open_weights(bank_weights, bank_out / "weights");
			const auto b = synth::build_style_bank(dataset::load_manifest(bank_manifest), bank_subject, bank_seed,
			                                       bank_settings, fx, jobs);
			synth::save_style_bank(b, bank_out);
			std::cout << b.styles.size() << " styles from subject " << b.source_subject << ", bank " << b.hash() << '\n';
		};
	});

	// stylize
	fs::path sty_model, sty_in, sty_out;
	auto* stylize = app.add_subcommand("stylize", "apply a style model to an image or a directory of images");
	stylize->add_option("--model", sty_model)->required();
	stylize->add_option("--in", sty_in)->required();
	stylize->add_option("--out", sty_out)->required();
	stylize->callback([&] {
		action = [&] {
			const auto model = style::load_style_model(sty_model);
			const auto inputs = images_in(sty_in);
			fs::create_directories(sty_out);
			for (const auto& p : inputs) {
				const auto rel = fs::is_directory(sty_in) ? fs::relative(p, sty_in) : p.filename();
				auto dst = sty_out / rel;
				dst.replace_extension(".png");
				fs::create_directories(dst.parent_path());
				save_png(dst, synth::stylize_at_training_size(model, load_image(p)));
			}
			std::cout << inputs.size() << " images stylized with " << model.style_id << '\n';
		};
	});

	// spoof-gen
	fs::path sg_manifest, sg_bank, sg_out;
	std::string sg_subject = "all";
	double sg_fraction = 0.10;
	std::uint64_t sg_seed = 0;
	auto* spoof_gen = app.add_subcommand("spoof-gen", "synthesize training spoofs for one or all subjects");
	spoof_gen->add_option("--manifest", sg_manifest, "split manifest")->required();
	spoof_gen->add_option("--bank", sg_bank)->required();
	spoof_gen->add_option("--subject", sg_subject, "subject id or all")->capture_default_str();
	spoof_gen->add_option("--fraction", sg_fraction)->capture_default_str();
	spoof_gen->add_option("--seed", sg_seed)->capture_default_str();
	spoof_gen->add_option("--out", sg_out, "output root, defaults to the manifest root");
	spoof_gen->callback([&] {
		action = [&] {
			const auto m = dataset::load_manifest(sg_manifest);
			const auto b = open_bank(sg_bank);
			for (const auto& s : subjects_arg(m, sg_subject)) {
				std::vector<std::string> warnings;
				synth::GenerateOptions opt{sg_out, jobs, &warnings};
				const auto set = synth::generate_spoofs(s, b, m, sg_fraction, sg_seed, opt);
				for (const auto& w : warnings) log::warn(w);
				std::cout << s << ": " << set.items.size() << " synthetic spoofs for " << set.live_train
				          << " live train frames\n";
			}
		};
	});

	// train
	fs::path tr_manifest, tr_synthetic, tr_out = "models", tr_descriptor, tr_bweights;
	std::string tr_subject = "all", tr_backbone = "spoof_modnet", tr_optimizer = "sgd";
	classifier::TrainConfig tc;
	bool tr_real = false;
	auto* train = app.add_subcommand("train", "train per-subject liveness classifiers");
	train->add_option("--manifest", tr_manifest, "split manifest")->required();
	train->add_option("--synthetic", tr_synthetic, "root holding <subject>/synthetic, defaults to the manifest root");
	train->add_option("--subject", tr_subject, "subject id or all")->capture_default_str();
	train->add_option("--backbone", tr_backbone, "spoof_modnet or external_backbone")->capture_default_str();
	train->add_option("--descriptor", tr_descriptor, "external backbone descriptor JSON");
	train->add_option("--backbone-weights", tr_bweights, "external backbone tensor archive");
	train->add_option("--lr", tc.learning_rate)->capture_default_str();
	train->add_option("--batch", tc.batch_size)->capture_default_str();
	train->add_option("--epochs", tc.epochs)->capture_default_str();
	train->add_option("--steps", tc.steps, "stop after N optimizer steps (0: epochs only)")->capture_default_str();
	train->add_option("--seed", tc.seed)->capture_default_str();
	train->add_option("--optimizer", tr_optimizer, "sgd or adam")->capture_default_str();
	train->add_flag("--real-spoofs", tr_real, "also train on real spoof frames");
	train->add_flag("--augment", tc.augment, "random horizontal flips");
	train->add_option("--out", tr_out, "model directory")->capture_default_str();
	train->callback([&] {
		action = [&] {
			if (tr_optimizer != "sgd" && tr_optimizer != "adam") throw ConfigError("--optimizer must be sgd or adam");
			tc.optimizer = tr_optimizer == "adam" ? nn::OptimizerKind::adam : nn::OptimizerKind::sgd;
			const auto backbone = classifier::parse_backbone(tr_backbone);
			std::optional<std::pair<nlohmann::json, fs::path>> external;
			std::size_t input = 32;
			if (backbone == classifier::Backbone::external_backbone) {
				std::ifstream in(tr_descriptor);
				if (!in) throw ConfigError("cannot read --descriptor " + tr_descriptor.string());
				external.emplace(nlohmann::json::parse(in), tr_bweights);
				input = external->first.value("input_size", std::size_t{224});
			}
			const auto m = dataset::load_manifest(tr_manifest);
			const auto root = tr_synthetic.empty() ? m.root : tr_synthetic;
			for (const auto& s : subjects_arg(m, tr_subject)) {
				const auto set = synth::load_provenance(root, s);
				const auto data = classifier::subject_training_set(m, s, &set, tr_real, input);
				const auto model = classifier::train_subject_model(s, data, tc, backbone, external);
				classifier::save_classifier(model, tr_out, s, {{"synthetic_bank_hash", set.bank_hash}, {"real_spoofs", tr_real}});
				std::cout << s << ": " << data.size() << " images, train accuracy "
				          << text::fixed6(classifier::accuracy(model, data)) << '\n';
			}
		};
	});

	// score
	fs::path sc_manifest, sc_models = "models", sc_out = "scores.csv";
	std::string sc_subject = "all";
	double sc_threshold = 0.5;
	auto* score = app.add_subcommand("score", "score the test frames with the per-subject models");
	score->add_option("--manifest", sc_manifest, "split manifest")->required();
	score->add_option("--models", sc_models)->capture_default_str();
	score->add_option("--subject", sc_subject)->capture_default_str();
	score->add_option("--threshold", sc_threshold)->capture_default_str();
	score->add_option("--out", sc_out)->capture_default_str();
	score->callback([&] {
		action = [&] {
			const auto m = dataset::load_manifest(sc_manifest);
			std::vector<metrics::ScoreRecord> all;
			for (const auto& s : subjects_arg(m, sc_subject)) {
				const auto p = sc_models / (s + ".json");
				if (!fs::exists(p)) throw PrerequisiteError("no model for subject " + s + " in " + sc_models.string() + "; run train first");
				const auto part = classifier::score_subject(classifier::load_classifier(p), m, s, sc_threshold);
				all.insert(all.end(), part.begin(), part.end());
			}
			metrics::write_scores(all, sc_out);
			std::cout << all.size() << " scores written to " << sc_out.string() << '\n';
		};
	});

	// eval
	fs::path ev_scores, ev_out = "report.json", ev_plot;
	double ev_threshold = 0.5;
	std::string ev_format = "json";
	auto* eval = app.add_subcommand("eval", "metrics report from a score file");
	eval->add_option("--scores", ev_scores)->required();
	eval->add_option("--threshold", ev_threshold)->capture_default_str();
	eval->add_option("--out", ev_out)->capture_default_str();
	eval->add_option("--format", ev_format, "json or csv")->capture_default_str();
	eval->add_option("--plot", ev_plot, "per-subject accuracy boxplot PNG");
	eval->callback([&] {
		action = [&] {
			const auto format = metrics::parse_report_format(ev_format);
			if (!fs::exists(ev_scores)) throw PrerequisiteError("score file " + ev_scores.string() + " not found; run score or train first");
			const auto report = metrics::evaluate(metrics::read_scores(ev_scores), ev_threshold);
			metrics::emit_report(report, format, ev_out,
			                     ev_plot.empty() ? std::nullopt : std::optional<fs::path>(ev_plot));
			std::cout << "ACER " << (report.acer ? text::fixed6(*report.acer) : std::string("undefined")) << '\n';
		};
	});

	// run
	std::string run_stage;
	fs::path run_config;
	bool run_force = false;
	auto* run = app.add_subcommand("run", "run a pipeline stage, or all of them, from a config file");
	run->add_option("stage", run_stage, "ingest, split, style-train, spoof-gen, train, eval, report or all")->required();
	run->add_option("-c,--config", run_config)->required();
	run->add_flag("--force", run_force, "rerun even when outputs are current");
	run->callback([&] {
		action = [&] {
			pipeline::Pipeline p(pipeline::load_config(run_config), {jobs, run_force});
			if (run_stage == "all") {
				p.run_all();
				std::cout << "report: " << p.layout().report().string() << '\n';
			} else {
				const auto st = pipeline::parse_stage(run_stage);
				if (p.run(st) == pipeline::StageStatus::up_to_date) std::cout << run_stage << " is up-to-date\n";
			}
		};
	});

	// validate
	fs::path val_config;
	bool val_print = false;
	auto* validate = app.add_subcommand("validate", "check a config file and list deviations from the defaults");
	validate->add_option("config", val_config)->required();
	validate->add_flag("--print", val_print, "print the effective config");
	validate->callback([&] {
		action = [&] {
			const auto c = pipeline::load_config(val_config);
			std::cout << "config ok, hash " << pipeline::config_hash(c) << '\n';
			for (const auto& d : pipeline::deviations(c))
				std::cout << "deviation: " << d.key << " = " << d.value << " (default " << d.default_value
				          << (d.stated ? ", method value" : "") << ")\n";
			if (val_print) std::cout << pipeline::render_config(c);
		};
	});

	// fixture
	fs::path fx_out;
	fixture::FixtureSpec fspec;
	auto* fix = app.add_subcommand("fixture", "write the procedural smoke-test dataset");
	fix->add_option("--out", fx_out)->required();
	fix->add_option("--subjects", fspec.subjects)->capture_default_str();
	fix->add_option("--live-videos", fspec.live_videos)->capture_default_str();
	fix->add_option("--frames", fspec.frames_per_video)->capture_default_str();
	fix->add_option("--size", fspec.size)->capture_default_str();
	fix->add_option("--seed", fspec.seed)->capture_default_str();
	fix->callback([&] {
		action = [&] {
			const auto st = fixture::write_fixture(fx_out, fspec);
			std::cout << st.live_frames << " live and " << st.spoof_frames << " spoof frames in " << fx_out.string() << '\n';
		};
	});

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int rc = app.exit(e);
		return rc == 0 ? 0 : exit_validation;
	}

	try {
		log::set_level(parse_level(level));
		action();
		return 0;
	} catch (const pipeline::ConfigValidationError& e) {
		std::cerr << "error: " << e.what() << '\n';
		return exit_validation;
	} catch (const ConfigError& e) {
		std::cerr << "error: " << e.what() << '\n';
		return exit_validation;
	} catch (const ContractError& e) {
		std::cerr << "error: " << e.what() << '\n';
		return exit_validation;
	} catch (const PrerequisiteError& e) {
		std::cerr << "error: " << e.what() << '\n';
		return exit_prerequisite;
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << '\n';
		return exit_runtime;
	}
}
