# ABOUTME: Synthetic labeled corpora, blob embeddings and seeds for civitopic tests
# ABOUTME: Category vocabularies overlap the taxonomy seed lists so guidance has something to find
# SPDX-License-Identifier: MIT

import numpy as np

from civitopic.corpus import PreprocessConfig, preprocess
from civitopic.models import Corpus, Document, EmbeddingMatrix, LabelResult, SeedTopic
from civitopic.taxonomy import Taxonomy

PROVIDER = "synthetic"

TAXONOMY = {
    "Saúde": ["Hospital", "Vacina", "Médico", "Outros em Saúde"],
    "Educação": ["Escola", "Professor", "Creche"],
    "Transporte": ["Ônibus", "Metrô", "Ciclovia"],
    "Segurança": ["Polícia", "Iluminação", "Guarda"],
    "Meio Ambiente": ["Reciclagem", "Parque", "Árvore"],
}

CATEGORY_WORDS = {
    "Saúde": ["saúde", "hospital", "vacina", "médico", "posto", "remédio", "enfermeiro", "consulta"],
    "Educação": ["educação", "escola", "professor", "creche", "aluno", "merenda", "livro", "ensino"],
    "Transporte": ["transporte", "ônibus", "metrô", "ciclovia", "linha", "tarifa", "estação", "trânsito"],
    "Segurança": ["segurança", "polícia", "iluminação", "guarda", "ronda", "câmera", "crime", "vigilância"],
    "Meio Ambiente": ["ambiente", "reciclagem", "parque", "árvore", "lixo", "rio", "verde", "poluição"],
}

COMMON_WORDS = ["cidade", "bairro", "melhorar", "população", "proposta", "governo"]


def categories(n_categories: int = 3) -> list[str]:
    return list(TAXONOMY)[:n_categories]


def make_taxonomy(n_categories: int = 5) -> Taxonomy:
    return Taxonomy({n1: TAXONOMY[n1] for n1 in categories(n_categories)})


def make_corpus(
    n_per_category: int = 40,
    n_categories: int = 3,
    seed: int = 0,
    category_words: int = 7,
    common_words: int = 3,
) -> Corpus:
    """Preprocessed documents drawing most words from their category vocabulary."""
    rng = np.random.default_rng(seed)
    documents = []
    for index, category in enumerate(categories(n_categories)):
        for item in range(n_per_category):
            words = list(rng.choice(CATEGORY_WORDS[category], category_words))
            words += list(rng.choice(COMMON_WORDS, common_words))
            text = " ".join(str(w) for w in rng.permutation(words))
            documents.append(
                Document(
                    id=f"c{index}-{item:04d}",
                    raw_text=text.capitalize() + ".",
                    declared_category=category,
                )
            )
    return preprocess(Corpus(tuple(documents)), PreprocessConfig())


def category_axes(corpus: Corpus) -> dict[str, int]:
    names = sorted({doc.declared_category or "" for doc in corpus.documents})
    return {name: axis for axis, name in enumerate(names)}


def blob_embeddings(
    corpus: Corpus,
    dim: int = 16,
    separation: float = 3.0,
    spread: float = 0.3,
    seed: int = 0,
    provider: str = PROVIDER,
) -> EmbeddingMatrix:
    """One Gaussian blob per declared category, centred at ``separation`` on its own axis."""
    rng = np.random.default_rng(seed)
    axes = category_axes(corpus)
    vectors = rng.normal(0.0, spread, size=(len(corpus), dim))
    for row, doc in enumerate(corpus.documents):
        vectors[row, axes[doc.declared_category or ""]] += separation
    return EmbeddingMatrix(vectors, tuple(corpus.ids), provider)


def noise_embeddings(corpus: Corpus, dim: int = 16, seed: int = 0, provider: str = PROVIDER) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(rng.normal(size=(len(corpus), dim)), tuple(corpus.ids), provider)


def axis_seed_topics(corpus: Corpus, dim: int = 16, provider: str = PROVIDER) -> list[SeedTopic]:
    """Unit seed vectors on each category's axis."""
    seeds = []
    for name, axis in category_axes(corpus).items():
        vector = np.zeros(dim)
        vector[axis] = 1.0
        words = tuple(TAXONOMY[name][:2])
        seeds.append(SeedTopic(name, words, vector, provider))
    return seeds


def gold_labels(corpus: Corpus) -> dict[str, LabelResult]:
    """N1 = declared category; N2 = one of its subterms, cycling by position."""
    labels = {}
    for position, doc in enumerate(corpus.documents):
        category = doc.declared_category or ""
        subterms = [t for t in TAXONOMY[category] if not t.startswith("Outros")]
        labels[doc.id] = LabelResult(doc.id, category, subterms[position % len(subterms)], "")
    return labels
