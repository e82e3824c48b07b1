"""Budget a multilingual corpus and stream from it.

A skewed corpus (one language 50x larger than another) gets a token
budget split under a per-language epoch cap, so small languages are
repeated at most ``epoch_cap`` times instead of being drowned out.
The stream then draws documents at the allocated proportions.
"""

import itertools

from longspan.corpus import Document, corpus_stats, sample_stream, unimax_allocate
from longspan.vocab import byte_vocab

tok = byte_vocab()

corpus = {
    "en": [Document("en", f"english document {i} with plenty of words " * 4) for i in range(200)],
    "fi": [Document("fi", f"suomalainen asiakirja {i} " * 4) for i in range(20)],
    "sw": [Document("sw", f"hati ya kiswahili {i} " * 4) for i in range(4)],
}

stats, lengths = corpus_stats(itertools.chain.from_iterable(corpus.values()), tok)
print("language stats:")
for lang, s in sorted(stats.items()):
    print(f"  {lang}: {s.doc_count} docs, {s.token_count} tokens")
print(f"doc length tokens: mean={lengths.mean:.1f} p50={lengths.p50} p90={lengths.p90}")

budget = 40_000
print(f"\nallocating {budget} tokens, epoch cap 2.0:")
alloc = unimax_allocate(stats, budget, epoch_cap=2.0)
for a in sorted(alloc, key=lambda a: -a.budget_tokens):
    cap = 2.0 * stats[a.lang].token_count
    note = " (capped)" if a.budget_tokens >= int(cap) else ""
    print(f"  {a.lang}: {a.budget_tokens} tokens, p={a.probability:.3f}{note}")

# small languages hit their cap; the largest absorbs what is left
print("\nsame corpus, epoch cap 10.0 (cap rarely binds):")
for a in sorted(unimax_allocate(stats, budget, epoch_cap=10.0), key=lambda a: -a.budget_tokens):
    print(f"  {a.lang}: {a.budget_tokens} tokens, p={a.probability:.3f}")

print("\ndrawing 2000 documents from the capped stream:")
stream = sample_stream(corpus, alloc, seed=0)
counts = {lang: 0 for lang in corpus}
for doc in itertools.islice(stream, 2000):
    counts[doc.lang] += 1
for lang, n in sorted(counts.items()):
    print(f"  {lang}: {n} draws ({n / 2000:.3f}, allocated "
          f"{next(a.probability for a in alloc if a.lang == lang):.3f})")

stream_again = sample_stream(corpus, alloc, seed=0)
first = [d.text[:20] for d in itertools.islice(sample_stream(corpus, alloc, seed=0), 5)]
second = [d.text[:20] for d in itertools.islice(stream_again, 5)]
print(f"\nsame seed, same stream: {first == second}")
