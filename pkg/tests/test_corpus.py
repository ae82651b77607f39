"""
Tests del servicio corpus.py: ingesta JSONL, shards, frases, spans y filtro
de solape literal.

Los ficheros se escriben en tmp_path; no hay red ni estado global.
"""

import json
import random

import pytest

from app.core.errors import ConfigError, CorpusParseError
from app.models import Record, Side, SpanSpotterConfig, Task
from app.services.corpus import (
    SPAN_DATE,
    SPAN_NAME,
    SPAN_NUMBER,
    child_id,
    encoding_text,
    export_jsonl,
    filter_min_sentences,
    ingest_jsonl,
    load_seed_jsonl,
    make_corpus,
    overlap_filter_for,
    shard_by_key,
    split_outputs,
    split_sentences,
    spot_spans,
    verbatim_overlap,
)


def _write(tmp_path, lines, name="c.jsonl"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def _doc(record_id, text, **meta):
    return Record(id=record_id, text=text, side=Side.INPUT, meta=meta)


WORDS = [
    "the", "storm", "hit", "Paris", "Anna", "Lopez", "in", "1889", "45%", "on", "May", "2,", "1990",
    "Dr.", "p.m.", "it", "rained.", "We", "stayed", "home.", "Did", "they?", "Yes!", "Rome", "Berlin",
]


def _random_text(rng, n_min=3, n_max=30):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(n_min, n_max)))


# ══════════════════════════════════════════════════════════════════════
#  ingest_jsonl
# ══════════════════════════════════════════════════════════════════════

class TestIngest:

    def test_tres_lineas_ids_secuenciales(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": t}) for t in ("uno", "dos", "tres")])
        corpus = ingest_jsonl(p, Side.INPUT)
        assert corpus.ids() == [0, 1, 2]
        assert corpus.get(1).text == "dos"

    def test_id_offset(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": "a"}), json.dumps({"text": "b"})])
        assert ingest_jsonl(p, Side.OUTPUT, id_offset=10).ids() == [10, 11]

    def test_normaliza_espacios(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": "  hola \t  mundo \n"})])
        assert ingest_jsonl(p, Side.INPUT).get(0).text == "hola mundo"

    def test_texto_vacio_se_omite_y_cuenta(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": "a"}), json.dumps({"text": "   "}), json.dumps({"text": "b"})])
        corpus = ingest_jsonl(p, Side.INPUT)
        assert len(corpus) == 2
        assert corpus.skipped == 1

    def test_lineas_en_blanco_se_ignoran(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": "a"}), "", json.dumps({"text": "b"})])
        assert len(ingest_jsonl(p, Side.INPUT)) == 2

    def test_json_malformado_nombra_linea(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": "a"}), "{no json"])
        with pytest.raises(CorpusParseError) as exc:
            ingest_jsonl(p, Side.INPUT)
        assert exc.value.line_no == 2
        assert ":2:" in str(exc.value)

    def test_falta_text(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"body": "a"})])
        with pytest.raises(CorpusParseError):
            ingest_jsonl(p, Side.INPUT)

    def test_id_duplicado(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"id": 5, "text": "a"}), json.dumps({"id": 5, "text": "b"})])
        with pytest.raises(CorpusParseError):
            ingest_jsonl(p, Side.INPUT)

    def test_meta_anidada_es_error(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": "a", "meta": {"x": {"y": 1}}})])
        with pytest.raises(CorpusParseError):
            ingest_jsonl(p, Side.INPUT)

    def test_meta_escalar_se_convierte_a_string(self, tmp_path):
        p = _write(tmp_path, [json.dumps({"text": "a", "meta": {"n": 3, "date": "2020-01-01"}})])
        meta = ingest_jsonl(p, Side.INPUT).get(0).meta
        assert meta == {"n": "3", "date": "2020-01-01"}

    def test_export_ingest_conserva_registros(self, tmp_path):
        corpus = make_corpus([_doc(3, "hola", date="2020-01-01"), _doc(7, "adiós")], Side.INPUT)
        path = export_jsonl(corpus, tmp_path / "out.jsonl")
        again = ingest_jsonl(path, Side.INPUT)
        assert again.records == corpus.records


# ══════════════════════════════════════════════════════════════════════
#  Seed set
# ══════════════════════════════════════════════════════════════════════

class TestSeed:

    def test_rc_answer_define_span(self, tmp_path):
        line = {"x": {"text": "Who built it?"}, "y": {"text": "It was built by Gustave Eiffel.", "answer": "Gustave Eiffel"}}
        p = _write(tmp_path, [json.dumps(line)])
        ex = load_seed_jsonl(p, Task.READING_COMPREHENSION)[0]
        assert ex.y.answer_text() == "Gustave Eiffel"
        assert ex.y.meta["answer_span"] == "16:30"

    def test_rc_sin_span_es_error(self, tmp_path):
        line = {"x": {"text": "q"}, "y": {"text": "passage"}}
        p = _write(tmp_path, [json.dumps(line)])
        with pytest.raises(CorpusParseError):
            load_seed_jsonl(p, Task.READING_COMPREHENSION)

    def test_resumen_no_exige_span(self, tmp_path):
        line = {"x": {"text": "Doc."}, "y": {"text": "Resumen."}}
        p = _write(tmp_path, [json.dumps(line)])
        assert len(load_seed_jsonl(p, Task.SUMMARIZATION)) == 1


# ══════════════════════════════════════════════════════════════════════
#  Shards
# ══════════════════════════════════════════════════════════════════════

class TestShards:

    def test_fechas_distintas_dos_shards(self):
        corpus = make_corpus(
            [_doc(0, "a", date="2020-01-01"), _doc(1, "b", date="2020-01-02"), _doc(2, "c", date="2020-01-01")],
            Side.INPUT,
        )
        shards = shard_by_key(corpus, "date")
        assert [(s.key_value, s.record_ids) for s in shards] == [("2020-01-01", [0, 2]), ("2020-01-02", [1])]

    def test_sin_clave_va_a_unkeyed(self):
        corpus = make_corpus([_doc(0, "a"), _doc(1, "b", date="2020-01-01")], Side.INPUT)
        keys = [s.key_value for s in shard_by_key(corpus, "date")]
        assert "_unkeyed" in keys

    def test_granularidad_mes(self):
        corpus = make_corpus([_doc(0, "a", date="2020-01-01"), _doc(1, "b", date="2020-01-31")], Side.INPUT)
        shards = shard_by_key(corpus, "date", "month")
        assert len(shards) == 1
        assert shards[0].key_value == "2020-01"

    def test_particion_disjunta_y_completa(self):
        rng = random.Random(0)
        for _ in range(50):
            ids = rng.sample(range(10_000), rng.randint(1, 40))
            docs = []
            for i in ids:
                meta = {} if rng.random() < 0.2 else {"date": f"2020-0{rng.randint(1, 3)}-1{rng.randint(0, 9)}"}
                docs.append(_doc(i, "x", **meta))
            corpus = make_corpus(docs, Side.INPUT)
            for granularity in (None, "day", "month", "year"):
                shards = shard_by_key(corpus, "date", granularity)
                flat = [i for s in shards for i in s.record_ids]
                assert sorted(flat) == sorted(ids)
                assert len(flat) == len(set(flat))
                assert [s.key_value for s in shards] == sorted(s.key_value for s in shards)

    def test_granularidad_desconocida(self):
        corpus = make_corpus([_doc(0, "a", date="2020-01-01")], Side.INPUT)
        with pytest.raises(ConfigError):
            shard_by_key(corpus, "date", "week")


# ══════════════════════════════════════════════════════════════════════
#  Frases
# ══════════════════════════════════════════════════════════════════════

class TestSentences:

    def _texts(self, text):
        return [text[b:e] for b, e in split_sentences(text)]

    def test_dos_frases(self):
        assert self._texts("It rained. We stayed home.") == ["It rained.", "We stayed home."]

    def test_abreviaturas_no_cortan(self):
        text = "Dr. Smith arrived. He left at 5 p.m. Then he slept."
        assert self._texts(text) == ["Dr. Smith arrived.", "He left at 5 p.m. Then he slept."]

    def test_inicial_no_corta(self):
        assert self._texts("J. Smith wrote it. Done.") == ["J. Smith wrote it.", "Done."]

    def test_minuscula_tras_punto_no_corta(self):
        assert len(split_sentences("Version 2. is out. Great")) == 2

    def test_texto_sin_palabras(self):
        assert split_sentences("... !!!") == []

    def test_filtro_min_frases(self):
        corpus = make_corpus(
            [_doc(0, "Uno. Dos. Tres. Cuatro."), _doc(1, "Solo una.")],
            Side.INPUT,
        )
        kept, dropped = filter_min_sentences(corpus, 4)
        assert kept.ids() == [0]
        assert dropped == 1


# ══════════════════════════════════════════════════════════════════════
#  Spans
# ══════════════════════════════════════════════════════════════════════

class TestSpans:

    def _spans(self, text, cfg=None):
        return [(text[s.begin:s.end], s.kind) for s in spot_spans(text, cfg)]

    def test_nombre_sin_stopword_inicial(self):
        text = "The Eiffel Tower was built in 1889."
        assert self._spans(text) == [("Eiffel Tower", SPAN_NAME), ("1889", SPAN_NUMBER)]

    def test_fecha_y_nombres(self):
        text = "He visited Paris, France on October 25, 1956."
        assert self._spans(text) == [
            ("Paris", SPAN_NAME),
            ("France", SPAN_NAME),
            ("October 25, 1956", SPAN_DATE),
        ]

    def test_sin_numeros(self):
        cfg = SpanSpotterConfig(include_numbers=False)
        assert self._spans("It cost 45% more.", cfg) == []

    def test_max_tokens_corta_racha(self):
        cfg = SpanSpotterConfig(max_span_tokens=2)
        spans = self._spans("we met Anna Maria Lopez today", cfg)
        assert ("Anna Maria", SPAN_NAME) in spans

    def test_spans_ordenados(self):
        spans = spot_spans("In 1990 Berlin changed; in 2001 Rome did.")
        assert [s.begin for s in spans] == sorted(s.begin for s in spans)


# ══════════════════════════════════════════════════════════════════════
#  split_outputs y filtro de solape
# ══════════════════════════════════════════════════════════════════════

class TestSplitOutputs:

    def test_resumen_una_salida_por_frase(self):
        doc = _doc(2, "It rained. We stayed home.", date="2020-01-01")
        outs = split_outputs(doc, Task.SUMMARIZATION)
        assert [o.text for o in outs] == ["It rained.", "We stayed home."]
        assert [o.id for o in outs] == [child_id(2, 0), child_id(2, 1)]
        assert all(o.meta["source_doc_id"] == "2" for o in outs)
        assert all(o.meta["date"] == "2020-01-01" for o in outs)
        assert all(o.side == Side.OUTPUT for o in outs)

    def test_rc_una_salida_por_span(self):
        passage = _doc(0, "The Eiffel Tower was built in 1889.")
        outs = split_outputs(passage, Task.READING_COMPREHENSION)
        assert [o.answer_text() for o in outs] == ["Eiffel Tower", "1889"]
        assert all(o.text == passage.text for o in outs)
        assert outs[1].meta["span_type"] == SPAN_NUMBER

    def test_encoding_text_rc_antepone_respuesta(self):
        out = split_outputs(_doc(0, "The Eiffel Tower was built in 1889."), Task.READING_COMPREHENSION)[1]
        assert encoding_text(out, Task.READING_COMPREHENSION) == "1889 The Eiffel Tower was built in 1889."
        assert encoding_text(out, Task.SUMMARIZATION) == out.text

    def test_child_id_sintetico_no_choca(self):
        assert child_id(1, 0) != child_id(1, 0, synthetic=True)

    def test_child_id_fuera_de_rango(self):
        with pytest.raises(ConfigError):
            child_id(2 ** 63, 0)

    def test_child_id_limite_2_44(self):
        assert child_id(2 ** 44 - 1, 5) == ((2 ** 44 - 1) << 20) | 5
        assert child_id(2 ** 44 - 1, 0, synthetic=True) < 2 ** 64
        with pytest.raises(ConfigError, match=r"2\^44"):
            child_id(2 ** 44, 0)

    def test_spans_en_rango_y_deterministas(self):
        rng = random.Random(1)
        for trial in range(100):
            doc = _doc(trial, _random_text(rng))
            for task in (Task.READING_COMPREHENSION, Task.SUMMARIZATION):
                outs = split_outputs(doc, task)
                assert outs == split_outputs(doc, task)
                for o in outs:
                    if task == Task.READING_COMPREHENSION:
                        begin, end = o.answer_span()
                        assert 0 <= begin < end <= len(o.text)
                        assert o.text[begin:end] == o.answer_text()
                    else:
                        assert o.text and o.text in doc.text


class TestVerbatimOverlap:

    def test_substring_normalizado(self):
        assert verbatim_overlap("The  CAT sat", "yesterday the cat sat down")

    def test_sin_solape(self):
        assert not verbatim_overlap("a dog", "the cat sat")

    def test_monotono_al_extender_con_sufijo(self):
        rng = random.Random(2)
        tails = ["", " ", "  x", ".", " The END", "\tmore words", "é!", "ẞ street"]
        for _ in range(300):
            haystack = _random_text(rng, 1, 15)
            words = haystack.split()
            a = rng.randrange(len(words))
            needle = " ".join(words[a:a + rng.randint(1, 4)])
            for candidate in (needle, _random_text(rng, 1, 3)):
                if verbatim_overlap(candidate, haystack):
                    for tail in tails:
                        suffix = tail + _random_text(rng, 0, 4) if tail else _random_text(rng, 1, 4)
                        assert verbatim_overlap(candidate, haystack + suffix)

    def test_filtro_rc_respuesta_en_pregunta(self):
        inputs = make_corpus([_doc(0, "When was the Eiffel Tower built?")], Side.INPUT)
        outs = split_outputs(_doc(1, "The Eiffel Tower was built in 1889."), Task.READING_COMPREHENSION)
        outputs = make_corpus(outs, Side.OUTPUT)
        drop = overlap_filter_for(Task.READING_COMPREHENSION, inputs, outputs)
        assert drop(0, outs[0].id) is True       # "Eiffel Tower" está en la pregunta
        assert drop(0, outs[1].id) is False      # "1889" no

    def test_filtro_resumen_frase_en_documento(self):
        doc = _doc(0, "It rained. We stayed home.")
        inputs = make_corpus([doc], Side.INPUT)
        outs = split_outputs(doc, Task.SUMMARIZATION)
        foreign = Record(id=99, text="Something else entirely.", side=Side.OUTPUT)
        outputs = make_corpus(outs + [foreign], Side.OUTPUT)
        drop = overlap_filter_for(Task.SUMMARIZATION, inputs, outputs)
        assert drop(0, outs[0].id) is True
        assert drop(0, 99) is False
