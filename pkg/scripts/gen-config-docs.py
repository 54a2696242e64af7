#!/usr/bin/env python3

import sys
import os
import argparse

# Needed to find libraries
sys.path.insert(1, os.path.join(os.path.dirname(__file__), '..'))

from deep_elastic.display import Display
from deep_elastic.run_config import root_field
from deep_elastic.template import Template
from deep_elastic.utils import json_line

CONFIG_DOC_TEMPLATE = r'''
{%- macro cleanup(value) -%}
{{ value | replace('|', '\|') | replace('\n', '\\n') }}
{%- endmacro -%}
<!--
NOTE: this document is automatically generated. Any manual changes will get overwritten.
-->
# Run config

A run config is a JSON (or YAML, for `.yml`/`.yaml` files) object. Other files can be pulled in
with a top-level `include` key; keys of the including file override the included ones.

{% for section in sections %}
### Section: {{ section.name }}

{{ section.description }}

Name | Type | Required | Default | Range | Description
--- | --- | --- | --- | --- | ---
{% for field in section.fields %}
`{{ field.name.split('.') | join(' . ') }}`
{#- Chomp whitespace between fields -#}
|{% if field.type %}`{{ field.type }}`{% if field.subtype %} (of `{{ field.subtype }}`){% endif %}{% endif %}
{#- Chomp whitespace between fields -#}
|{{ 'yes' if field.required else 'no' }}
{#- Chomp whitespace between fields -#}
|{% if field.default is not none %}`{{ cleanup(field.default) }}`{% endif %}
{#- Chomp whitespace between fields -#}
|{{ field.range }}
{#- Chomp whitespace between fields -#}
|{{ field.description }}
{% endfor %}

{% endfor %}
'''


def field_range(field):
    if field.choices is not None:
        return ', '.join('`%s`' % c for c in field.choices)
    parts = []
    if field.min is not None:
        parts.append('%s %s' % ('>' if field.exclusive_min else '>=', field.min))
    if field.max is not None:
        parts.append('<= %s' % field.max)
    return ', '.join(parts)


def get_config_fields(fields):
    '''
    Create sorted list of nested fields
    '''
    ret = []
    for field_name in sorted(fields.keys()):
        field = fields[field_name]
        ret.append(dict(
            name=field.get_full_name(),
            type=field.type,
            subtype=field.subtype,
            required=field.required,
            default=json_line(field.default) if field.default is not None else None,
            range=field_range(field),
            description=field.description or '',
        ))
        if field.fields:
            ret.extend(get_config_fields(field.fields))
    return ret


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument(
        '-o', '--output-dir',
        help="Directory to output generated docs to (defaults to './docs')",
        default='./docs'
    )
    args = parser.parse_args()

    display = Display()
    display.set_verbosity(3)

    root = root_field()
    sections = []
    for name in sorted(root.fields):
        field = root.fields[name]
        sections.append(dict(
            name=name,
            description=field.description or '',
            fields=get_config_fields({name: field}),
        ))

    output_file = os.path.join(args.output_dir, 'config.md')
    display.display('Writing file %s' % output_file)
    with open(output_file, 'w') as f:
        f.write(Template().render_template(CONFIG_DOC_TEMPLATE, dict(sections=sections)))


if __name__ == '__main__':
    main()
