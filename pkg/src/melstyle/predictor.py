"""Style prediction from hierarchical context embeddings.

The hierarchical predictor maps context to styles top-down with residual
conditioning: the global prediction conditions the sentence prediction,
and their sum conditions each subword prediction.  Each predictor is a
concatenate-then-linear map with tanh, so every output lies in (-1, 1).

The autoregressive variant chains GRU cells across the sentences of a
document (and across subwords within a sentence) for paragraph synthesis,
consuming the previous step's style as extra conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context_encoder import ContextEmbeddings
from .errors import DataError
from .extractor import StyleEmbeddings
from .nn import GRU, Linear, Module, Tensor
from .nn import autograd as ag


@dataclass
class PredictedStyles:
    S_g_hat: Tensor
    S_s_hat: Tensor
    S_w_hat: Tensor  # [n_subwords, d_style]

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.array(self.S_g_hat.data), np.array(self.S_s_hat.data),
                np.array(self.S_w_hat.data))


@dataclass
class ParagraphStyles:
    sentences: list[PredictedStyles]

    def __len__(self) -> int:
        return len(self.sentences)

    def __getitem__(self, index: int) -> PredictedStyles:
        return self.sentences[index]


def _rows_with_condition(rows: Tensor, condition: Tensor) -> Tensor:
    """Concatenate a shared condition vector onto every row."""
    n = rows.shape[0]
    tiled = ag.add(Tensor(np.zeros((n, condition.shape[0]))),
                   ag.reshape(condition, (1, condition.shape[0])))
    return ag.concat([rows, tiled], axis=1)


class HierarchicalStylePredictor(Module):
    def __init__(self, d_ctx: int, d_style: int, rng: np.random.Generator):
        super().__init__()
        self.d_ctx, self.d_style = d_ctx, d_style
        self.f_g = Linear(d_ctx, d_style, rng, activation="tanh")
        self.f_s = Linear(d_ctx + d_style, d_style, rng, activation="tanh")
        self.f_w = Linear(d_ctx + d_style, d_style, rng, activation="tanh")

    def predict_global(self, ctx: ContextEmbeddings) -> Tensor:
        return self.f_g(ctx.C_g)

    def predict(self, ctx: ContextEmbeddings) -> PredictedStyles:
        s_g = self.predict_global(ctx)
        current_row = ctx.current_sentence_context()
        s_s_in = ag.concat([current_row, ag.reshape(s_g, (1, self.d_style))], axis=1)
        s_s = ag.reshape(self.f_s(s_s_in), (self.d_style,))
        condition = ag.add(s_g, s_s)
        s_w = self.f_w(_rows_with_condition(ctx.current_subword_context(), condition))
        return PredictedStyles(S_g_hat=s_g, S_s_hat=s_s, S_w_hat=s_w)


def predict_hierarchical(predictor: HierarchicalStylePredictor,
                         ctx: ContextEmbeddings) -> PredictedStyles:
    return predictor.predict(ctx)


class AutoregressiveStylePredictor(Module):
    """Paragraph-level predictor with recurrent sentence and subword chains.

    The global style is still predicted per sentence from its own window;
    the sentence chain consumes (C_s at the current offset, the global
    prediction, the previous sentence style) and the subword chain consumes
    (C_w row, global + sentence predictions, the previous subword style).
    Recurrent state and the step-0 previous style are zero.  The subword
    chain restarts at each sentence; cross-sentence coherence flows through
    the sentence chain.
    """

    def __init__(self, d_ctx: int, d_style: int, rng: np.random.Generator):
        super().__init__()
        self.d_ctx, self.d_style = d_ctx, d_style
        self.f_g = Linear(d_ctx, d_style, rng, activation="tanh")
        self.sentence_cell = GRU(d_ctx + 2 * d_style, d_style, rng)
        self.sentence_out = Linear(d_style, d_style, rng, activation="tanh")
        self.subword_cell = GRU(d_ctx + 2 * d_style, d_style, rng)
        self.subword_out = Linear(d_style, d_style, rng, activation="tanh")

    def predict_global(self, ctx: ContextEmbeddings) -> Tensor:
        return self.f_g(ctx.C_g)

    def predict_paragraph(self, ctx_seq: list[ContextEmbeddings],
                          teacher_styles: list[StyleEmbeddings] | None = None
                          ) -> ParagraphStyles:
        """Predict styles for consecutive sentences of one document.

        With ``teacher_styles`` the previous-style inputs are taken from the
        given embeddings instead of the model's own outputs.
        """
        if not ctx_seq:
            raise DataError("cannot predict styles for an empty document")
        d = self.d_style
        results: list[PredictedStyles] = []
        h_sentence = Tensor(np.zeros((1, d)))
        prev_sentence_style = Tensor(np.zeros(d))
        for t, ctx in enumerate(ctx_seq):
            s_g = self.f_g(ctx.C_g)
            x = ag.concat([ctx.current_sentence_context(),
                           ag.reshape(s_g, (1, d)),
                           ag.reshape(prev_sentence_style, (1, d))], axis=1)
            h_sentence = self.sentence_cell.step(x, h_sentence)
            s_s = ag.reshape(self.sentence_out(h_sentence), (d,))

            condition = ag.add(s_g, s_s)
            rows = ctx.current_subword_context()
            h_subword = Tensor(np.zeros((1, d)))
            prev_subword_style = Tensor(np.zeros(d))
            out_rows: list[Tensor] = []
            n = rows.shape[0]
            for i in range(n):
                x_w = ag.concat([rows[i:i + 1],
                                 ag.reshape(condition, (1, d)),
                                 ag.reshape(prev_subword_style, (1, d))], axis=1)
                h_subword = self.subword_cell.step(x_w, h_subword)
                row = self.subword_out(h_subword)
                out_rows.append(row)
                if teacher_styles is not None:
                    prev_subword_style = ag.reshape(
                        teacher_styles[t].S_w[i:i + 1].detach(), (d,))
                else:
                    prev_subword_style = ag.reshape(row, (d,))
            s_w = ag.concat(out_rows, axis=0)
            results.append(PredictedStyles(S_g_hat=s_g, S_s_hat=s_s, S_w_hat=s_w))
            if teacher_styles is not None:
                prev_sentence_style = teacher_styles[t].S_s.detach()
            else:
                prev_sentence_style = s_s
        return ParagraphStyles(sentences=results)


def predict_paragraph_ar(predictor: AutoregressiveStylePredictor,
                         ctx_seq: list[ContextEmbeddings],
                         teacher_styles: list[StyleEmbeddings] | None = None
                         ) -> ParagraphStyles:
    return predictor.predict_paragraph(ctx_seq, teacher_styles=teacher_styles)
