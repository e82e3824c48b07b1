"""Byte-level and piece-level vocabularies with a shared reserved-id layout.

Layout, for a vocabulary of ``size`` ids:

* 0 pad, 1 eos, 2 unk, 3/4/5 the R/S/X denoiser mode prompts,
* ids ``[RESERVED, size - NUM_SENTINELS)`` carry content (bytes or pieces),
* the top 100 ids are span sentinels, descending: sentinel k sits at
  ``size - 1 - k`` so sentinel 0 has the highest id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
MODE_IDS = {"R": 3, "S": 4, "X": 5}
RESERVED = 6
NUM_SENTINELS = 100

_MODE_BY_ID = {v: k for k, v in MODE_IDS.items()}


@dataclass
class Vocab:
    """Maps text to integer ids and back.

    With ``pieces`` unset, content ids are the 256 UTF-8 byte values offset
    by RESERVED. With ``pieces`` set, content ids come from the piece table
    and encoding is greedy longest-match with unmatched characters mapped
    to unk.
    """

    size: int
    pieces: dict[str, int] | None = None
    _by_first_char: dict[str, list[str]] = field(default_factory=dict, repr=False)
    _id_to_piece: dict[int, str] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.pieces is not None:
            for piece in self.pieces:
                self._by_first_char.setdefault(piece[0], []).append(piece)
            # longest-first so the first hit is the greedy match
            for cands in self._by_first_char.values():
                cands.sort(key=len, reverse=True)
            self._id_to_piece = {i: p for p, i in self.pieces.items()}

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def mode_ids(self) -> dict[str, int]:
        return dict(MODE_IDS)

    def sentinel_id(self, k: int) -> int:
        """Id of span sentinel ``k``; sentinel 0 has the highest id."""
        if not 0 <= k < NUM_SENTINELS:
            raise ValueError(f"sentinel index {k} out of range [0, {NUM_SENTINELS})")
        return self.size - 1 - k

    def is_sentinel(self, token_id: int) -> bool:
        return self.size - NUM_SENTINELS <= token_id < self.size

    def sentinel_index(self, token_id: int) -> int:
        if not self.is_sentinel(token_id):
            raise ValueError(f"id {token_id} is not a sentinel")
        return self.size - 1 - token_id

    def segment(self, text: str) -> list[str]:
        """Split text into pieces by greedy longest match.

        Byte vocabularies segment per character. Characters no piece covers
        are kept verbatim as single-character segments.
        """
        if self.pieces is None:
            return list(text)
        out: list[str] = []
        i = 0
        while i < len(text):
            for cand in self._by_first_char.get(text[i], ()):
                if text.startswith(cand, i):
                    out.append(cand)
                    i += len(cand)
                    break
            else:
                out.append(text[i])
                i += 1
        return out

    def encode(self, text: str) -> list[int]:
        """Text to content ids. No eos is appended; callers add one."""
        if self.pieces is None:
            return [RESERVED + b for b in text.encode("utf-8")]
        assert self.pieces is not None
        return [self.pieces.get(seg, UNK_ID) for seg in self.segment(text)]

    def decode(self, ids: list[int]) -> str:
        """Ids back to text.

        pad and eos render empty, sentinel k renders ``<extra_id_k>``, mode
        prompts render ``[R]``/``[S]``/``[X]``, unk renders ``<unk>``. Byte
        runs are decoded as UTF-8 with invalid sequences replaced.
        """
        parts: list[str] = []
        byte_run = bytearray()

        def flush() -> None:
            if byte_run:
                parts.append(byte_run.decode("utf-8", errors="replace"))
                byte_run.clear()

        for i in ids:
            if not 0 <= i < self.size:
                raise ValueError(f"id {i} out of range [0, {self.size})")
            if self.pieces is None and RESERVED <= i < self.size - NUM_SENTINELS:
                byte_run.append(i - RESERVED)
                continue
            flush()
            if i in (PAD_ID, EOS_ID):
                continue
            if i == UNK_ID:
                parts.append("<unk>")
            elif i in _MODE_BY_ID:
                parts.append(f"[{_MODE_BY_ID[i]}]")
            elif self.is_sentinel(i):
                parts.append(f"<extra_id_{self.sentinel_index(i)}>")
            else:
                parts.append(self._id_to_piece[i])
        flush()
        return "".join(parts)


def byte_vocab() -> Vocab:
    """The 362-id byte vocabulary: 6 reserved + 256 bytes + 100 sentinels."""
    return Vocab(size=RESERVED + 256 + NUM_SENTINELS)


def load_piece_vocab(path: str) -> Vocab:
    """Load a piece table from a TSV of ``piece<TAB>id`` lines.

    Lines starting with ``#`` are comments. Piece ids must be exactly the
    dense range [RESERVED, RESERVED + n_pieces); the resulting vocabulary
    appends the standard 100 sentinels above them.
    """
    pieces: dict[str, int] = {}
    seen_ids: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"line {lineno}: expected piece<TAB>id, got {line!r}")
            piece, id_text = fields
            if not piece:
                raise ValueError(f"line {lineno}: empty piece")
            try:
                piece_id = int(id_text)
            except ValueError:
                raise ValueError(f"line {lineno}: bad id {id_text!r}") from None
            if piece in pieces:
                raise ValueError(f"line {lineno}: duplicate piece {piece!r}")
            if piece_id in seen_ids:
                raise ValueError(f"line {lineno}: duplicate id {piece_id}")
            pieces[piece] = piece_id
            seen_ids.add(piece_id)
    if not pieces:
        raise ValueError("piece table is empty")
    expected = set(range(RESERVED, RESERVED + len(pieces)))
    if seen_ids != expected:
        raise ValueError(
            f"piece ids must cover exactly [{RESERVED}, {RESERVED + len(pieces)}), "
            f"got {sorted(seen_ids)[:5]}..."
        )
    return Vocab(size=RESERVED + len(pieces) + NUM_SENTINELS, pieces=pieces)
