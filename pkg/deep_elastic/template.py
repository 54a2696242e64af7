import jinja2
import json

from deep_elastic.errors import TemplateUndefinedError


class Template(object):

    def __init__(self, default_vars=None):
        # Default vars
        self._default_vars = default_vars or {}
        # We use StrictUndefined to raise an exception when accessing an
        # undefined var, so that we can report it to the user
        self._env = jinja2.Environment(undefined=jinja2.StrictUndefined, keep_trailing_newline=True,
                                       trim_blocks=True, lstrip_blocks=True)
        self._env.filters.update(FILTERS)

    def render_template(self, template, args=None):
        '''
        Render a template string, or every string in a dict/list
        '''
        if args is None:
            args = self._default_vars
        if isinstance(template, dict):
            return dict((k, self.render_template(v, args)) for k, v in template.items())
        if isinstance(template, (list, tuple)):
            return [self.render_template(v, args) for v in template]
        if isinstance(template, str):
            try:
                return self._env.from_string(template).render(**args)
            except jinja2.exceptions.UndefinedError as e:
                raise TemplateUndefinedError('undefined value: %s in template: %s' % (str(e), template))
        return template


def filter_to_json(arg, **args):
    return json.dumps(arg, sort_keys=True, **args)


def filter_to_nice_json(arg, indent=2, prefix_indent=None, **args):
    out = filter_to_json(arg, indent=indent, **args)
    # Add extra indentation to all lines to account for being embedded in a
    # larger document
    if prefix_indent:
        out = '\n'.join([(' ' * prefix_indent) + line for line in out.split('\n')])
    return out


def filter_percent(arg, digits=2):
    return '%.*f%%' % (digits, 100.0 * float(arg))


def filter_fixed(arg, digits=4):
    return '%.*f' % (digits, float(arg))


FILTERS = {
    'to_json': filter_to_json,
    'to_nice_json': filter_to_nice_json,
    'percent': filter_percent,
    'fixed': filter_fixed,
}


EVAL_REPORT = '''\
Evaluation on the {{ split }} split ({{ checkpoint }})

{{ '%-6s %-8s %9s %9s %9s %12s %10s' | format('task', 'policy', 'accuracy', 'loss', 'density', 'flops', 'params') }}
{% for row in rows %}
{{ '%-6s %-8s %9s %9s %9s %12s %10s' | format(row.task, row.policy, row.accuracy | percent, row.loss | fixed,
   row.mean_density | fixed, row.mean_flops | fixed(1), row.mean_params | fixed(1)) }}
{% endfor %}
{% if random_beta is not none %}

random selector: beta {{ random_beta | fixed }} matched to mean density {{ random_density | fixed }}
{% endif %}
'''

ANALYZE_REPORT = '''\
Selector analysis of {{ checkpoint }} on the {{ split }} split

{% for task in tasks %}
task {{ task.task }} ({{ task.count }} instances, {{ task.histogram.distinct }} distinct structures)
  top structures:
{% for entry in task.histogram.counts[:top_k] %}
    {{ entry.structure }}  {{ entry.count }}
{% endfor %}
  mean level probabilities (rows = levels, columns = blocks):
{% for line in task.level_rows %}
    {{ line }}
{% endfor %}
  average cost: density {{ task.cost.mean_density | fixed }}, flops {{ task.cost.mean_flops | fixed(1) }}, params {{ task.cost.mean_params | fixed(1) }}
{% endfor %}
'''
