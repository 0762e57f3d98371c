from flask import Flask, jsonify
from flask_cors import CORS

from app.api.routes import api_bp
from app.cli import cli


def create_app():
    app = Flask(__name__)

    # Enable CORS
    CORS(app)

    app.register_blueprint(api_bp, url_prefix='/api')

    # flask --app app workbench ...
    app.cli.add_command(cli, name='workbench')

    @app.route('/health')
    def health_check():
        """Health check endpoint"""
        return jsonify({'status': 'healthy', 'message': 'Barrier certificate workbench API is running'})

    return app
