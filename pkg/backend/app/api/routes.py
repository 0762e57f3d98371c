from flask import Blueprint, request
from flask_restx import Api, Resource, fields
import logging

from app.core.workbench import workbench
from app.utils.data_loader import data_loader

logger = logging.getLogger(__name__)

# Create blueprint
api_bp = Blueprint('api', __name__)
api = Api(api_bp, title='Barrier Certificate Workbench API', version='1.0',
          description='Verification, probability estimates and conversions for stochastic reach-avoid certificates')

# Create namespaces
verify_ns = api.namespace('verify', description='Grid verification of certificates')
estimate_ns = api.namespace('estimate', description='Monte Carlo reach-avoid estimates')
convert_ns = api.namespace('convert', description='Conversions between barrier-like conditions')
problems_ns = api.namespace('problems', description='Shipped benchmark problems')

# Define models for API documentation
verify_request_model = api.model('VerifyRequest', {
    'problem': fields.Raw(required=True, description='Benchmark name or problem document'),
    'condition': fields.Raw(required=True, description='Condition document with inline certificates'),
    'resolution': fields.Float(description='Grid cell side'),
    'quad_order': fields.Integer(description='Gauss points per disturbance axis'),
    'seed': fields.Integer(description='Seed for the probe points'),
})

estimate_request_model = api.model('EstimateRequest', {
    'problem': fields.Raw(required=True, description='Benchmark name or problem document'),
    'x0': fields.List(fields.Float, description='Initial state'),
    'grid': fields.Integer(description='Points per axis over the initial set, instead of x0'),
    'samples': fields.Integer(description='Number of trajectories N'),
    'horizon': fields.Integer(description='Truncation horizon K'),
    'alpha': fields.Float(description='Confidence parameter'),
    'seed': fields.Integer(description='Base seed'),
    'condition': fields.Raw(description='Condition whose certified bound is checked against the interval'),
})

convert_request_model = api.model('ConvertRequest', {
    'conversion': fields.String(required=True, description='e.g. aras-to-bc4restricted'),
    'condition': fields.Raw(required=True, description='Source condition document with inline certificates'),
})

problem_summary_model = api.model('ProblemSummary', {
    'name': fields.String(required=True),
    'dim': fields.Integer(required=True),
    'disturbance': fields.String(required=True),
    'threshold': fields.Float(required=True),
    'invariant': fields.Boolean(required=True),
    'description': fields.String,
})


def _json_body():
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        api.abort(400, 'No JSON data provided')
    return data


def _problem(data):
    if 'problem' not in data:
        raise ValueError("problem is required")
    return data_loader.load_problem(data['problem'])


@verify_ns.route('/')
class VerifyResource(Resource):
    @api.expect(verify_request_model)
    @api.doc(description='Verify certificates against a condition on a problem')
    def post(self):
        """Grid-verify a condition instance"""
        data = _json_body()
        try:
            instance = data_loader.load_condition(data.get('condition') or {}, _problem(data))
            verdict = workbench.verify(instance, data.get('resolution'), data.get('quad_order'), data.get('seed'))
            return verdict.to_dict()
        except ValueError as e:
            api.abort(400, str(e))
        except Exception as e:
            logger.error(f"Verify error: {str(e)}")
            api.abort(500, 'Internal server error')


@estimate_ns.route('/')
class EstimateResource(Resource):
    @api.expect(estimate_request_model)
    @api.doc(description='Estimate the reach-avoid probability from an initial state or an initial-set grid')
    def post(self):
        """Monte Carlo reach-avoid estimate"""
        data = _json_body()
        try:
            problem = _problem(data)
            instance = data_loader.load_condition(data['condition'], problem) if data.get('condition') else None
            report = workbench.estimate(problem, data.get('x0'), data.get('grid'), data.get('samples'),
                                        data.get('horizon'), data.get('alpha'), data.get('seed'), instance)
            return report.to_dict()
        except ValueError as e:
            api.abort(400, str(e))
        except Exception as e:
            logger.error(f"Estimate error: {str(e)}")
            api.abort(500, 'Internal server error')


@convert_ns.route('/')
class ConvertResource(Resource):
    @api.expect(convert_request_model)
    @api.doc(description='Convert certificates and scalars to another condition')
    def post(self):
        """Apply a constructive conversion"""
        data = _json_body()
        try:
            doc, certs, _ = data_loader.load_condition_parts(data.get('condition') or {})
            result = workbench.convert(str(data.get('conversion', '')), certs, doc['scalars'])
            return result.condition_doc(problem=doc.get('problem'))
        except ValueError as e:
            api.abort(400, str(e))
        except Exception as e:
            logger.error(f"Convert error: {str(e)}")
            api.abort(500, 'Internal server error')


@problems_ns.route('/')
class ProblemListResource(Resource):
    @api.marshal_list_with(problem_summary_model)
    def get(self):
        """List the benchmark problems"""
        return data_loader.list_problems().to_dict('records')


@problems_ns.route('/<string:name>')
class ProblemResource(Resource):
    @api.doc(params={'name': 'Benchmark name, e.g. ex3'})
    def get(self, name):
        """Return a benchmark problem document"""
        if not data_loader.is_benchmark(name):
            api.abort(404, f"Unknown problem {name}")
        return data_loader.load_problem(name).to_dict()
