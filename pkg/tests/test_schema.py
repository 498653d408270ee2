import pytest
import yaml

from copa.errors import SchemaError
from copa.schema import load_schema, schema_from_dict


def _doc(**overrides):
    doc = {
        "modality_preamble": "This is a dermoscopic image",
        "template": "the {title} of the lesion is {candidate}",
        "disease_classes": ["nevus", "melanoma"],
        "concepts": [
            {"title": "Pigment Network", "candidates": ["atypical", "typical"]},
            {"title": "Streaks", "candidates": ["absent", "present"]},
        ],
    }
    doc.update(overrides)
    return doc


def test_load_schema_roundtrip(tmp_path):
    path = tmp_path / "schema.yaml"
    path.write_text(yaml.safe_dump(_doc()), encoding="utf-8")
    schema = load_schema(path)
    assert schema.n_concepts == 2
    assert schema.concepts[0].title == "Pigment Network"
    assert schema.concepts[0].candidates == ("atypical", "typical")
    assert schema.candidate_counts() == (2, 2)
    # ordering survives serialization
    assert schema_from_dict(schema.to_dict()) == schema


def test_fixture_file_matches_builtin(schema):
    loaded = load_schema("configs/synthetic_schema.yaml")
    assert loaded == schema
    assert loaded.n_concepts == 3
    assert loaded.candidate_counts() == (3, 2, 2)


def test_render_prompt_dermoscopic_example():
    schema = schema_from_dict(_doc())
    text = schema.render_prompt(0, 0)
    assert text == "This is a dermoscopic image, the pigment network of the lesion is atypical"


def test_render_prompt_synthetic_example(schema):
    assert (
        schema.render_prompt(0, 0)
        == "This is a synthetic image, the color of the lesion is red"
    )


def test_render_prompt_deterministic(schema):
    assert schema.render_prompt(1, 1) == schema.render_prompt(1, 1)


@pytest.mark.parametrize("concept,candidate", [(-1, 0), (3, 0), (0, 3), (1, 2)])
def test_render_prompt_index_errors(schema, concept, candidate):
    with pytest.raises(IndexError):
        schema.render_prompt(concept, candidate)


def test_duplicate_candidates_rejected():
    with pytest.raises(SchemaError) as err:
        schema_from_dict(
            _doc(concepts=[{"title": "a", "candidates": ["x", "x"]}])
        )
    assert "concepts[0].candidates" in str(err.value)


def test_duplicate_titles_rejected():
    with pytest.raises(SchemaError) as err:
        schema_from_dict(
            _doc(
                concepts=[
                    {"title": "a", "candidates": ["x", "y"]},
                    {"title": "a", "candidates": ["u", "v"]},
                ]
            )
        )
    assert "concepts[1].title" in str(err.value)


def test_single_candidate_rejected():
    with pytest.raises(SchemaError):
        schema_from_dict(_doc(concepts=[{"title": "a", "candidates": ["only"]}]))


@pytest.mark.parametrize(
    "template",
    [
        "no placeholders at all",
        "only {title} here",
        "{title} and {candidate} and {extra}",
        "{title} twice {title} with {candidate}",
    ],
)
def test_bad_templates_rejected(template):
    with pytest.raises(SchemaError) as err:
        schema_from_dict(_doc(template=template))
    assert "template" in str(err.value)


def test_too_few_classes_rejected():
    with pytest.raises(SchemaError):
        schema_from_dict(_doc(disease_classes=["only"]))


def test_missing_key_reports_path():
    doc = _doc()
    del doc["concepts"]
    with pytest.raises(SchemaError) as err:
        schema_from_dict(doc)
    assert "concepts" in str(err.value)


def test_hash_stable_and_sensitive(schema):
    assert schema.hash() == schema.hash()
    other = schema_from_dict(_doc())
    assert schema.hash() != other.hash()


def test_unparsable_file(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("concepts: [unclosed", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_schema(path)
