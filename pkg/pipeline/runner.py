"""Pipeline commands: train the network, calibrate saliency, train writers, identify, evaluate."""

import hashlib
import uuid
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import spearmanr

from core.config import HogConfig, PipelineConfig, settings
from core.exceptions import ConfigurationError, LayerNotInBundle, MissingFile
from core.logger import setup_logger
from core.monitoring import MetricsCollector, metrics_collector
from core.validators import ArtifactValidator, ConfigValidator
from classify import scoring
from classify.bundle import LayerModels, WriterBundle, load_bundle, save_bundle
from classify.scoring import ScoreVector, fuse, page_score, predict, rank_of_truth, top_k_accuracy
from classify.selection import grid_search, select_alpha, word_scores
from classify.svm import drop_zero_rows, train_ova
from convnet.network import NetWeights
from convnet.training import TrainingHistory, train_emnist
from convnet.weights import load_weights, save_weights
from corpus.emnist import LabeledImages, load_emnist
from corpus.manifest import WordCorpus, WordEntry, iam_protocol, load_corpus
from corpus.synthetic import generate_synthetic_corpus
from pipeline.extraction import DescriptorExtractor, WordDescriptors
from pipeline.report import PredictionRow, ReportWriter
from pooling.strategies import STRATEGIES
from saliency.calibration import build_calibration_set, calibrate_layer
from saliency.profile import SaliencyProfile, load_profile, profile_path, save_profile

logger = setup_logger("pipeline")

EXPERIMENTS = ("pooling", "layers", "hog-bins", "words", "stability")


def file_digest(path: Union[str, Path]) -> str:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"File not found: {path}", {"path": str(path)})
    return hashlib.sha256(path.read_bytes()).hexdigest()


def mode_layers(mode: str) -> List[int]:
    """Layers whose models a layer mode scores with."""
    return [1, 2] if mode == "fused" else [int(mode[-1])]


@dataclass
class FittedModels:
    """Writer models of the layers one layer mode needs, plus the fusion weight."""
    layers: Dict[int, LayerModels]
    mode: str
    alpha: Optional[float] = None


class WriterIdentificationPipeline:
    """Runs the pipeline commands against one validated config."""

    def __init__(
        self,
        config: PipelineConfig,
        jobs: Optional[int] = None,
        force: bool = False,
        metrics: Optional[MetricsCollector] = None,
    ):
        self.config = ConfigValidator.validate(config)
        self.jobs = jobs or settings.jobs
        self.force = force
        self.metrics = metrics or metrics_collector
        self.paths = config.paths

    @contextmanager
    def _session(self, command: str):
        session_id = uuid.uuid4().hex[:12]
        self.metrics.start_session(session_id, command)
        try:
            yield session_id
        except Exception as e:
            self.metrics.end_session(session_id, "failed", str(e))
            raise
        else:
            self.metrics.end_session(session_id, "completed")

    # ------------------------------------------------------------------ inputs

    def _emnist(self, images: Optional[str], labels: Optional[str], what: str) -> LabeledImages:
        if not images or not labels:
            raise ConfigurationError(f"paths.emnist_{what}_images and paths.emnist_{what}_labels must be set")
        return load_emnist(images, labels, letters_only=True, scheme=self.config.training.label_scheme)

    def _corpus_manifest(self) -> Path:
        if self.paths.corpus_manifest:
            return Path(self.paths.corpus_manifest)
        return Path(self.paths.synthetic_dir) / "corpus" / "manifest.csv"

    def _calibration_manifest(self) -> Path:
        if self.paths.calibration_manifest:
            return Path(self.paths.calibration_manifest)
        return Path(self.paths.synthetic_dir) / "calibration" / "manifest.csv"

    def word_corpus(self) -> WordCorpus:
        """The identification corpus with validation words carved from the train split.

        Under the ``iam`` protocol the manifest splits are ignored and each writer
        is re-split into one train page and one test page.
        """
        if self.config.protocol == "iam":
            loaded = load_corpus(self._corpus_manifest(), require_test=False)
            corpus = iam_protocol(((e.writer, e.page, e.path) for e in loaded.entries),
                                  self.config.seed_for("iam-protocol"))
            corpus.validate()
        else:
            corpus = load_corpus(self._corpus_manifest())
        return corpus.with_validation(self.config.svm.validation_fraction, self.config.seed_for("validation"))

    def weights(self) -> NetWeights:
        return load_weights(Path(self.paths.weights), self.config.conv)

    def profiles(self, layers: Sequence[int], weights_digest: str) -> Dict[int, SaliencyProfile]:
        """Load saved saliency profiles and check their provenance."""
        out = {}
        for layer in layers:
            profile = load_profile(profile_path(Path(self.paths.profiles_dir), layer))
            ArtifactValidator.check_digest(weights_digest, profile.weights_digest,
                                           f"conv{layer} saliency profile (weights)", self.force)
            ArtifactValidator.check_digest(self.config.calibration_digest(), profile.config_digest,
                                           f"conv{layer} saliency profile", self.force)
            out[layer] = profile
        return out

    def _needs_profiles(self, strategies: Sequence[str]) -> bool:
        return any(s != "average" for s in strategies)

    # --------------------------------------------------------------- commands

    def cmd_synth_corpus(self) -> Tuple[WordCorpus, WordCorpus]:
        """Write the synthetic identification corpus and a disjoint calibration corpus."""
        ConfigValidator.validate_synthetic(self.config)
        with self._session("synth-corpus"):
            glyphs = self._emnist(self.paths.emnist_train_images, self.paths.emnist_train_labels, "train")
            root = Path(self.paths.synthetic_dir)
            corpus = generate_synthetic_corpus(
                glyphs, root / "corpus", self.config.synthetic, self.config.seed_for("synthetic"),
            )
            saliency = self.config.saliency
            calibration = generate_synthetic_corpus(
                glyphs, root / "calibration", self.config.synthetic,
                self.config.seed_for("synthetic-calibration"),
                num_writers=saliency.calibration_writers,
                words_per_writer=saliency.words_per_writer,
                calibration=True, prefix="c",
            )
            return corpus, calibration

    def cmd_train_cnn(self) -> Tuple[NetWeights, TrainingHistory]:
        """Train the writer-independent network on EMNIST letters and save its weights."""
        training = self.config.training
        with self._session("train-cnn") as session:
            with self.metrics.stage(session, "load"):
                train = self._emnist(self.paths.emnist_train_images, self.paths.emnist_train_labels, "train")
                if self.paths.emnist_val_images and self.paths.emnist_val_labels:
                    val = self._emnist(self.paths.emnist_val_images, self.paths.emnist_val_labels, "val")
                else:
                    train, val = train.split(training.validation_fraction, self.config.seed_for("emnist-split"))
                if training.max_train_samples and len(train) > training.max_train_samples:
                    rng = np.random.default_rng(self.config.seed_for("emnist-subset"))
                    train = train.subset(np.sort(rng.choice(len(train), training.max_train_samples, replace=False)))
                if training.invert_ink:
                    train, val = train.inverted(), val.inverted()
            with self.metrics.stage(session, "train"):
                weights, history = train_emnist(
                    train, val, self.config.conv, training,
                    seed=self.config.seed_for("convnet"),
                    dataset_digest=train.digest(),
                    config_digest=self.config.digest(),
                )
            self.metrics.set_gauge("cnn_val_accuracy", history.best_val_accuracy)
            save_weights(weights, Path(self.paths.weights))
            return weights, history

    def calibrate_profiles(
        self,
        weights: NetWeights,
        corpus: WordCorpus,
        layers: Sequence[int],
        hog: Optional[HogConfig] = None,
        writers: Optional[Sequence[str]] = None,
        weights_digest: str = "",
    ) -> Dict[int, SaliencyProfile]:
        """Saliency profiles of ``layers`` from the words of a calibration corpus."""
        saliency = self.config.saliency
        writers = list(writers or corpus.writers[:saliency.calibration_writers])
        if len(writers) < saliency.calibration_writers:
            logger.warning(f"⚠️ Calibrating on {len(writers)} writers, fewer than the configured "
                           f"{saliency.calibration_writers}")
        entries: List[WordEntry] = []
        for writer in writers:
            words = [e for e in corpus.entries if e.writer == writer]
            entries.extend(words[:saliency.words_per_writer])

        extractor = DescriptorExtractor(self.config, weights, layers=layers, hog=hog, metrics=self.metrics)
        with ThreadPoolExecutor(max_workers=max(1, self.jobs)) as pool:
            per_word = list(pool.map(extractor.filter_hogs, [e.path for e in entries]))

        profiles = {}
        for layer in layers:
            grouped: Dict[str, List[np.ndarray]] = defaultdict(list)
            for entry, hogs in zip(entries, per_word):
                grouped[entry.writer].append(hogs[layer])
            per_writer = {w: np.concatenate(parts, axis=0) for w, parts in grouped.items()}
            cset = build_calibration_set(per_writer, layer, saliency.max_fragments_per_writer,
                                         self.config.seed_for(f"calibration-conv{layer}"))
            profiles[layer] = calibrate_layer(
                cset, saliency, jobs=self.jobs, top_k=self.config.evaluation.top_k,
                config_digest=self.config.calibration_digest(), weights_digest=weights_digest, metrics=self.metrics,
            )
        return profiles

    def cmd_calibrate(self) -> Dict[int, SaliencyProfile]:
        """Compute and save one saliency profile per modelled layer."""
        with self._session("calibrate") as session:
            weights = self.weights()
            weights_digest = file_digest(self.paths.weights)
            corpus = load_corpus(self._calibration_manifest(), require_test=False)
            with self.metrics.stage(session, "calibrate"):
                profiles = self.calibrate_profiles(weights, corpus, self.config.modelled_layers(),
                                                   weights_digest=weights_digest)
            for layer, profile in profiles.items():
                save_profile(profile, profile_path(Path(self.paths.profiles_dir), layer))
            return profiles

    # ---------------------------------------------------------------- fitting

    def extract_splits(
        self,
        weights: NetWeights,
        profiles: Dict[int, SaliencyProfile],
        corpus: WordCorpus,
        strategies: Sequence[str],
        layers: Sequence[int],
        hog: Optional[HogConfig] = None,
        splits: Sequence[str] = ("train", "validation", "test"),
    ) -> Dict[str, List[WordDescriptors]]:
        extractor = DescriptorExtractor(self.config, weights, profiles, strategies, layers, hog, self.metrics)
        return {split: extractor.words([e.path for e in corpus.split(split)], self.jobs) for split in splits}

    def layer_scores(self, lm: LayerModels, words: Sequence[WordDescriptors],
                     strategy: str) -> List[Optional[ScoreVector]]:
        """Word scores from one layer's models; None for words without fragments."""
        present = [i for i, w in enumerate(words) if not w.empty]
        scored = word_scores(lm.models, [words[i].matrix(strategy, lm.layer) for i in present], f"conv{lm.layer}")
        out: List[Optional[ScoreVector]] = [None] * len(words)
        for i, s in zip(present, scored):
            out[i] = s
        return out

    def mode_scores(self, fitted: FittedModels, words: Sequence[WordDescriptors],
                    strategy: str) -> List[Optional[ScoreVector]]:
        if fitted.mode != "fused":
            return self.layer_scores(fitted.layers[int(fitted.mode[-1])], words, strategy)
        P1 = self.layer_scores(fitted.layers[1], words, strategy)
        P2 = self.layer_scores(fitted.layers[2], words, strategy)
        return [None if a is None else fuse(a, b, fitted.alpha) for a, b in zip(P1, P2)]

    def fit_models(
        self,
        corpus: WordCorpus,
        words: Dict[str, List[WordDescriptors]],
        strategy: str,
        mode: str,
        profiles: Optional[Dict[int, SaliencyProfile]] = None,
    ) -> FittedModels:
        """Grid-search and train per-writer SVMs for the layers ``mode`` uses."""
        svm = self.config.svm
        layers = mode_layers(mode)
        train_entries, val_entries = corpus.split("train"), corpus.split("validation")
        fitted = FittedModels(layers={}, mode=mode)
        for layer in layers:
            rows = [wd.matrix(strategy, layer) for wd in words["train"]]
            labels = [e.writer for e, m in zip(train_entries, rows) for _ in range(len(m))]
            X, y = drop_zero_rows(np.vstack(rows), labels, self.metrics)
            val = [(wd.matrix(strategy, layer), e.writer)
                   for e, wd in zip(val_entries, words["validation"]) if not wd.empty]
            seed = self.config.seed_for(f"svm-conv{layer}")
            best = grid_search((X, y), val, svm.C_grid, svm.gamma_grid, svm, seed, self.jobs, self.metrics)
            models = train_ova(X, y, best.C, best.gamma, svm, seed=seed, jobs=self.jobs, metrics=self.metrics)
            profile = (profiles or {}).get(layer)
            lm = LayerModels(layer, best.C, best.gamma, models, profile.digest() if profile else "", best.table)
            ArtifactValidator.check_writers(corpus.writers, lm.writers, f"conv{layer} models")
            fitted.layers[layer] = lm

        if mode == "fused":
            if self.config.fusion.alpha is not None:
                fitted.alpha = self.config.fusion.alpha
            else:
                P1 = self.layer_scores(fitted.layers[1], words["validation"], strategy)
                P2 = self.layer_scores(fitted.layers[2], words["validation"], strategy)
                triples = [(a, b, e.writer) for a, b, e in zip(P1, P2, val_entries) if a is not None]
                fitted.alpha = select_alpha(triples, self.config.fusion.alpha_grid).alpha
        return fitted

    def cmd_train_writers(self) -> WriterBundle:
        """Train per-writer SVMs on the corpus train split and save the model bundle."""
        config = self.config
        with self._session("train-writers") as session:
            weights = self.weights()
            weights_digest = file_digest(self.paths.weights)
            layers = config.modelled_layers()
            profiles = self.profiles(layers, weights_digest) if self._needs_profiles([config.pooling]) else {}
            corpus = self.word_corpus()
            with self.metrics.stage(session, "extract"):
                words = self.extract_splits(weights, profiles, corpus, [config.pooling], layers,
                                            splits=("train", "validation"))
            with self.metrics.stage(session, "fit"):
                fitted = self.fit_models(corpus, words, config.pooling, config.layer_mode, profiles)
            bundle = WriterBundle(
                writers=corpus.writers,
                layers=fitted.layers,
                pooling=config.pooling,
                layer_mode=config.layer_mode,
                alpha=fitted.alpha,
                config_digest=config.model_digest(),
                weights_digest=weights_digest,
                config=config.model_dump(mode="json"),
            )
            save_bundle(bundle, Path(self.paths.bundle))
            return bundle

    # ---------------------------------------------------------- identification

    def summarize(self, entries: Sequence[WordEntry], scores: Sequence[Optional[ScoreVector]],
                  k: int = 5) -> Tuple[List[PredictionRow], Dict[str, Any]]:
        """Report rows plus word- and page-level top-1/top-k."""
        rows: List[PredictionRow] = []
        word_pairs: List[Tuple[ScoreVector, str]] = []
        pages: Dict[Tuple[str, str], List[ScoreVector]] = defaultdict(list)
        skipped = 0
        for entry, s in zip(entries, scores):
            if s is None:
                skipped += 1
                rows.append(PredictionRow(str(entry.path), entry.writer))
                continue
            known = bool(entry.writer)
            rows.append(PredictionRow(
                str(entry.path), entry.writer, predict(s),
                rank_of_truth(s, entry.writer) if known else None,
                scoring.top_k(s, 5),
            ))
            if known:
                word_pairs.append((s, entry.writer))
                pages[(entry.writer, entry.page)].append(s)
        if skipped:
            self.metrics.increment_counter("words_skipped", skipped)
            logger.info(f"{skipped} test words had no usable fragments")
        page_pairs = [(page_score(v), writer) for (writer, _), v in sorted(pages.items())]
        summary = {
            "words": {
                "total": len(entries), "scored": len(word_pairs), "skipped": skipped,
                "top1": top_k_accuracy(word_pairs, 1), "top5": top_k_accuracy(word_pairs, k),
            },
            "pages": {
                "scored": len(page_pairs),
                "top1": top_k_accuracy(page_pairs, 1), "top5": top_k_accuracy(page_pairs, k),
            },
        }
        return rows, summary

    def sample_words(self, entries: Sequence[WordEntry], per_writer: int, seed: int) -> List[WordEntry]:
        """At most ``per_writer`` seeded random words per writer, in corpus order."""
        rng = np.random.default_rng(seed)
        by_writer: Dict[str, List[int]] = defaultdict(list)
        for i, e in enumerate(entries):
            by_writer[e.writer].append(i)
        keep = set()
        for writer in sorted(by_writer, key=scoring.natural_key):
            indices = by_writer[writer]
            if len(indices) > per_writer:
                indices = rng.choice(indices, size=per_writer, replace=False).tolist()
            keep.update(indices)
        return [e for i, e in enumerate(entries) if i in keep]

    def cmd_identify(
        self,
        image: Optional[Union[str, Path]] = None,
        words_per_writer: Optional[int] = None,
        dump: Optional[Union[str, Path]] = None,
    ) -> Dict[str, Any]:
        """Identify one word image or the corpus test split and write the report."""
        config = self.config
        with self._session("identify") as session:
            bundle = load_bundle(Path(self.paths.bundle))
            ArtifactValidator.check_digest(config.model_digest(), bundle.config_digest, "model bundle", self.force)
            weights = self.weights()
            ArtifactValidator.check_digest(bundle.weights_digest, file_digest(self.paths.weights),
                                           "network weights", self.force)
            mode = config.layer_mode
            layers = mode_layers(mode)
            for layer in layers:
                if layer not in bundle.layers:
                    raise LayerNotInBundle(
                        f"Layer mode {mode} needs conv{layer} models, but the bundle was trained "
                        f"for {bundle.layer_mode} and holds conv{sorted(bundle.layers)}",
                        {"layer": layer, "mode": mode, "bundle_mode": bundle.layer_mode},
                    )
            alpha = None
            if mode == "fused":
                alpha = bundle.alpha if bundle.alpha is not None else config.fusion.alpha
                if alpha is None:
                    raise LayerNotInBundle("Fused scoring needs a fusion weight; set fusion.alpha or retrain fused",
                                           {"mode": mode, "bundle_mode": bundle.layer_mode})
            profiles: Dict[int, SaliencyProfile] = {}
            if self._needs_profiles([bundle.pooling]):
                profiles = self.profiles(layers, bundle.weights_digest)
                for layer in layers:
                    ArtifactValidator.check_digest(bundle.layer(layer).saliency_digest, profiles[layer].digest(),
                                                   f"conv{layer} saliency profile", self.force)
            fitted = FittedModels(layers={l: bundle.layers[l] for l in layers}, mode=mode, alpha=alpha)
            extractor = DescriptorExtractor(config, weights, profiles, [bundle.pooling], layers, metrics=self.metrics)

            if image is not None:
                entries = [WordEntry("", "", "test", Path(image))]
            else:
                entries = self.word_corpus().split("test")
                if words_per_writer:
                    entries = self.sample_words(entries, words_per_writer, config.seed_for("identify-words"))
            with self.metrics.stage(session, "extract"):
                words = extractor.words([e.path for e in entries], self.jobs)
            if dump is not None and entries:
                extractor.dump(entries[0].path, dump)
            scores = self.mode_scores(fitted, words, bundle.pooling)
            rows, summary = self.summarize(entries, scores, config.evaluation.top_k)
            if image is not None and scores[0] is not None:
                logger.info(f"🔍 {Path(image).name}: top writers {scoring.top_k(scores[0], 5)}")
            summary.update({
                "layer_mode": mode,
                "alpha": alpha,
                "pooling": bundle.pooling,
                "writers": bundle.writers,
                "words_per_writer": words_per_writer,
                "config_digest": config.digest(),
                "metrics": self.metrics.export_metrics(),
            })
            ReportWriter(Path(self.paths.report_dir)).write_identification(rows, summary)
            logger.info(f"✅ Word top-1 {summary['words']['top1']:.4f}, page top-1 {summary['pages']['top1']:.4f}")
            return summary

    # ------------------------------------------------------------- evaluation

    def _experiment_profiles(self, weights: NetWeights, layers: Sequence[int],
                             hog: Optional[HogConfig] = None) -> Dict[int, SaliencyProfile]:
        """Saved profiles where they fit, otherwise calibrated in memory."""
        out: Dict[int, SaliencyProfile] = {}
        missing = []
        for layer in layers:
            path = profile_path(Path(self.paths.profiles_dir), layer)
            if hog is None and path.exists():
                out[layer] = load_profile(path)
            else:
                missing.append(layer)
        if missing:
            logger.info(f"Calibrating saliency for conv{missing} in memory")
            corpus = load_corpus(self._calibration_manifest(), require_test=False)
            out.update(self.calibrate_profiles(weights, corpus, missing, hog))
        return out

    def _evaluate_fit(self, corpus, words, strategy, mode, profiles) -> Dict[str, Any]:
        fitted = self.fit_models(corpus, words, strategy, mode, profiles)
        _, summary = self.summarize(corpus.split("test"), self.mode_scores(fitted, words["test"], strategy),
                                    self.config.evaluation.top_k)
        return {"word_top1": summary["words"]["top1"], "word_top5": summary["words"]["top5"],
                "page_top1": summary["pages"]["top1"], "alpha": fitted.alpha}

    def experiment_pooling(self, weights, corpus) -> List[Dict[str, Any]]:
        layers = mode_layers(self.config.layer_mode)
        profiles = self._experiment_profiles(weights, layers)
        words = self.extract_splits(weights, profiles, corpus, STRATEGIES, layers)
        return [dict(pooling=s, **self._evaluate_fit(corpus, words, s, self.config.layer_mode, profiles))
                for s in STRATEGIES]

    def experiment_layers(self, weights, corpus) -> List[Dict[str, Any]]:
        strategy = self.config.pooling
        layers = [1, 2, 3]
        profiles = self._experiment_profiles(weights, layers) if self._needs_profiles([strategy]) else {}
        words = self.extract_splits(weights, profiles, corpus, [strategy], layers)
        return [dict(layer=mode, **self._evaluate_fit(corpus, words, strategy, mode, profiles))
                for mode in ("conv1", "conv2", "conv3", "fused")]

    def experiment_hog_bins(self, weights, corpus) -> List[Dict[str, Any]]:
        strategy = self.config.pooling
        table = []
        for k in self.config.evaluation.hog_bin_sweep:
            hog = self.config.hog.with_bins(k)
            profiles = self._experiment_profiles(weights, [1, 2], hog) if self._needs_profiles([strategy]) else {}
            words = self.extract_splits(weights, profiles, corpus, [strategy], [1, 2], hog)
            row: Dict[str, Any] = {"k": k}
            for mode in ("conv1", "conv2", "fused"):
                row[f"{mode}_top1"] = self._evaluate_fit(corpus, words, strategy, mode, profiles)["word_top1"]
            table.append(row)
        return table

    def experiment_words(self, weights, corpus) -> List[Dict[str, Any]]:
        """Top-1 when N random test words per writer are pooled like a page."""
        config = self.config
        layers = mode_layers(config.layer_mode)
        profiles = self._experiment_profiles(weights, layers) if self._needs_profiles([config.pooling]) else {}
        words = self.extract_splits(weights, profiles, corpus, [config.pooling], layers)
        fitted = self.fit_models(corpus, words, config.pooling, config.layer_mode, profiles)
        test_entries = corpus.split("test")
        scores = self.mode_scores(fitted, words["test"], config.pooling)
        by_writer: Dict[str, List[ScoreVector]] = defaultdict(list)
        for entry, s in zip(test_entries, scores):
            if s is not None:
                by_writer[entry.writer].append(s)

        table = []
        for n in config.evaluation.words_per_writer_sweep:
            accuracies = []
            for repeat in range(config.evaluation.repeats):
                rng = np.random.default_rng(config.seed_for(f"words-{n}-{repeat}"))
                hits = 0
                for writer in sorted(by_writer, key=scoring.natural_key):
                    pool = by_writer[writer]
                    chosen = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
                    hits += predict(page_score([pool[i] for i in chosen])) == writer
                accuracies.append(hits / max(len(by_writer), 1))
            table.append({"words_per_writer": n, "top1_mean": float(np.mean(accuracies)),
                          "top1_std": float(np.std(accuracies))})
        return table

    def experiment_stability(self, weights, corpus=None) -> List[Dict[str, Any]]:
        """Rank agreement of saliency weights calibrated on two disjoint writer halves."""
        calibration = load_corpus(self._calibration_manifest(), require_test=False)
        writers = calibration.writers[:self.config.saliency.calibration_writers]
        halves = (writers[0::2], writers[1::2])
        layers = self.config.modelled_layers()
        first = self.calibrate_profiles(weights, calibration, layers, writers=halves[0])
        second = self.calibrate_profiles(weights, calibration, layers, writers=halves[1])
        table = []
        for layer in layers:
            rho = spearmanr(first[layer].w, second[layer].w).correlation
            table.append({"layer": layer, "spearman": float(rho), "writers_a": len(halves[0]),
                          "writers_b": len(halves[1])})
        return table

    def cmd_evaluate(self, experiment: str) -> Dict[str, Any]:
        """Run one desk-scale experiment and write its report."""
        if experiment not in EXPERIMENTS:
            raise ConfigurationError(f"Unknown experiment {experiment!r}", {"choices": list(EXPERIMENTS)})
        with self._session(f"evaluate-{experiment}") as session:
            weights = self.weights()
            corpus = self.word_corpus() if experiment != "stability" else None
            runner = getattr(self, f"experiment_{experiment.replace('-', '_')}")
            with self.metrics.stage(session, experiment):
                table = runner(weights, corpus)
            summary = {"config_digest": self.config.digest(), "metrics": self.metrics.export_metrics()}
            ReportWriter(Path(self.paths.report_dir)).write_experiment(experiment, table, summary)
            for row in table:
                logger.info(f"📊 {experiment}: {row}")
            return {"experiment": experiment, "table": table, **summary}
